"""Shared file helpers: atomic writes and deterministic float formatting."""

from __future__ import annotations

import os
from contextlib import contextmanager


def fmt_float(x: float) -> str:
    """Format a float with 9 significant digits (interchange convention)."""
    return format(float(x), ".9g")


@contextmanager
def atomic_write(path: str):
    """Write to a temp file next to `path`, then rename into place.

    The rename is atomic on POSIX, so readers never observe a partial file.
    """
    tmp = f"{path}.tmp"
    f = open(tmp, "w", encoding="utf-8")
    try:
        yield f
        f.flush()
        os.fsync(f.fileno())
        f.close()
        os.replace(tmp, path)
    except BaseException:
        f.close()
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
