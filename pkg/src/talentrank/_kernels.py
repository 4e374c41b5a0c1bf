"""Sequential SGD kernels for sampled-mode embedding training.

These inner loops dominate sampled-mode runtime, so they are JIT-compiled
with numba when available. Set TALENTRANK_NO_NUMBA=1 to force the plain
numpy path (same update sequence; per-sample results may differ in the
last ulp because vector dots use a different summation order).

All sampling decisions are made by the caller and passed in as index
arrays, so both paths are deterministic given the same inputs.
"""

from __future__ import annotations

import math
import os

import numpy as np


def _numba_requested() -> bool:
    return os.environ.get("TALENTRANK_NO_NUMBA", "0") in ("", "0")


def _log_sigmoid(x: float) -> float:
    # -log(1 + exp(-x)) without overflow
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _first_order_epoch_loop(emb, src, dst, neg, lr):
    # emb: (n, d) updated in place; src/dst: (m,) sampled edge endpoints;
    # neg: (m, k) noise vertices. Returns summed surrogate loss.
    d = emb.shape[1]
    k = neg.shape[1]
    loss = 0.0
    for t in range(src.shape[0]):
        i = src[t]
        j = dst[t]
        dot = 0.0
        for c in range(d):
            dot += emb[i, c] * emb[j, c]
        loss -= _log_sigmoid(dot)
        g = _sigmoid(dot) - 1.0
        for c in range(d):
            gi = g * emb[j, c]
            gj = g * emb[i, c]
            emb[i, c] -= lr * gi
            emb[j, c] -= lr * gj
        for q in range(k):
            v = neg[t, q]
            if v == i or v == j:
                continue
            dot = 0.0
            for c in range(d):
                dot += emb[i, c] * emb[v, c]
            loss -= _log_sigmoid(-dot)
            g = _sigmoid(dot)
            for c in range(d):
                gi = g * emb[v, c]
                gv = g * emb[i, c]
                emb[i, c] -= lr * gi
                emb[v, c] -= lr * gv
    return loss


def _second_order_epoch_loop(vert, ctx, src, dst, neg, lr):
    # vert/ctx: (n, d) updated in place; src -> dst are sampled directed
    # edges; neg: (m, k) noise contexts. Returns summed surrogate loss.
    d = vert.shape[1]
    k = neg.shape[1]
    loss = 0.0
    for t in range(src.shape[0]):
        i = src[t]
        j = dst[t]
        dot = 0.0
        for c in range(d):
            dot += vert[i, c] * ctx[j, c]
        loss -= _log_sigmoid(dot)
        g = _sigmoid(dot) - 1.0
        for c in range(d):
            gi = g * ctx[j, c]
            gj = g * vert[i, c]
            vert[i, c] -= lr * gi
            ctx[j, c] -= lr * gj
        for q in range(k):
            v = neg[t, q]
            if v == j:
                continue
            dot = 0.0
            for c in range(d):
                dot += vert[i, c] * ctx[v, c]
            loss -= _log_sigmoid(-dot)
            g = _sigmoid(dot)
            for c in range(d):
                gi = g * ctx[v, c]
                gv = g * vert[i, c]
                vert[i, c] -= lr * gi
                ctx[v, c] -= lr * gv
    return loss


def _np_log_sigmoid(x: float) -> float:
    return -float(np.logaddexp(0.0, -x))


def _first_order_epoch_numpy(emb, src, dst, neg, lr):
    k = neg.shape[1]
    loss = 0.0
    for t in range(src.shape[0]):
        i = int(src[t])
        j = int(dst[t])
        dot = float(emb[i] @ emb[j])
        loss -= _np_log_sigmoid(dot)
        g = _sigmoid(dot) - 1.0
        gi = g * emb[j]
        gj = g * emb[i]
        emb[i] -= lr * gi
        emb[j] -= lr * gj
        for q in range(k):
            v = int(neg[t, q])
            if v == i or v == j:
                continue
            dot = float(emb[i] @ emb[v])
            loss -= _np_log_sigmoid(-dot)
            g = _sigmoid(dot)
            gi = g * emb[v]
            gv = g * emb[i]
            emb[i] -= lr * gi
            emb[v] -= lr * gv
    return loss


def _second_order_epoch_numpy(vert, ctx, src, dst, neg, lr):
    k = neg.shape[1]
    loss = 0.0
    for t in range(src.shape[0]):
        i = int(src[t])
        j = int(dst[t])
        dot = float(vert[i] @ ctx[j])
        loss -= _np_log_sigmoid(dot)
        g = _sigmoid(dot) - 1.0
        gi = g * ctx[j]
        gj = g * vert[i]
        vert[i] -= lr * gi
        ctx[j] -= lr * gj
        for q in range(k):
            v = int(neg[t, q])
            if v == j:
                continue
            dot = float(vert[i] @ ctx[v])
            loss -= _np_log_sigmoid(-dot)
            g = _sigmoid(dot)
            gi = g * ctx[v]
            gv = g * vert[i]
            vert[i] -= lr * gi
            ctx[v] -= lr * gv
    return loss


NUMBA_ENABLED = False
if _numba_requested():
    try:
        from numba import njit

        _log_sigmoid = njit(cache=True)(_log_sigmoid)
        _sigmoid = njit(cache=True)(_sigmoid)
        first_order_epoch = njit(cache=True)(_first_order_epoch_loop)
        second_order_epoch = njit(cache=True)(_second_order_epoch_loop)
        NUMBA_ENABLED = True
    except ImportError:
        pass

if not NUMBA_ENABLED:
    first_order_epoch = _first_order_epoch_numpy
    second_order_epoch = _second_order_epoch_numpy
