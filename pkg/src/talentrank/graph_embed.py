"""First- and second-order proximity embeddings over the entity graph,
pooling of entity bags, and the similarity measures used as ranking
features.

Exact mode minimizes the KL objectives with full-batch gradient descent
(learning rate halves whenever a step would increase the objective, so the
accepted-step history is nonincreasing by construction). Sampled mode runs
LINE-style edge sampling with negative sampling for scale; its inner loops
live in _kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .corpus import EntityId
from .entity_graph import GraphError, WeightedGraph
from .fileio import atomic_write, fmt_float

TABLE_KINDS = ("first_order", "second_order_vertex", "second_order_context", "concat", "supervised")

_MIN_LR = 1e-14
NOISE_POWER = 0.75


class EmbeddingError(ValueError):
    """Invalid embedding configuration or lookup."""


class EmbeddingTable:
    """Entity id -> d-dimensional float64 vector."""

    def __init__(self, dim: int, kind: str, vectors: dict, history=None):
        if dim < 1:
            raise EmbeddingError(f"dim must be >= 1, got {dim}")
        if kind not in TABLE_KINDS:
            raise EmbeddingError(f"unknown table kind {kind!r}")
        self.dim = dim
        self.kind = kind
        self.vectors: dict[EntityId, np.ndarray] = {}
        for e, v in vectors.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (dim,):
                raise EmbeddingError(f"entity {e.id}: vector has shape {v.shape}, expected ({dim},)")
            if not np.all(np.isfinite(v)):
                raise EmbeddingError(f"entity {e.id}: vector has non-finite entries")
            self.vectors[e] = v
        self.history = history  # per-step objective values when trained

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, e: EntityId) -> bool:
        return e in self.vectors

    def __getitem__(self, e: EntityId) -> np.ndarray:
        try:
            return self.vectors[e]
        except KeyError:
            raise KeyError(f"no vector for entity ({e.namespace}, {e.id})") from None

    def entity_ids(self) -> list:
        return sorted(self.vectors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        if self.dim != other.dim or self.kind != other.kind:
            return False
        if set(self.vectors) != set(other.vectors):
            return False
        return all(np.array_equal(self.vectors[e], other.vectors[e]) for e in self.vectors)

    def save(self, path: str) -> None:
        with atomic_write(path) as f:
            f.write(f"dim={self.dim} kind={self.kind}\n")
            for e in self.entity_ids():
                f.write(f"{e.id} " + " ".join(fmt_float(x) for x in self.vectors[e]) + "\n")

    @classmethod
    def load(cls, path: str, namespace: str) -> "EmbeddingTable":
        with open(path, encoding="utf-8") as f:
            header = f.readline().split()
            try:
                dim = int(header[0].removeprefix("dim="))
                kind = header[1].removeprefix("kind=")
            except (IndexError, ValueError):
                raise EmbeddingError(f"bad embedding file header: {' '.join(header)!r}") from None
            vectors = {}
            for lineno, line in enumerate(f, start=2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != dim + 1:
                    raise EmbeddingError(f"line {lineno}: expected id and {dim} values")
                vectors[EntityId(namespace, int(parts[0]))] = np.array(
                    [float(x) for x in parts[1:]], dtype=np.float64
                )
        return cls(dim, kind, vectors)


@dataclass(frozen=True)
class EmbedConfig:
    dim: int = 50
    learning_rate: float = 1.0
    epochs: int = 400
    mode: str = "exact"
    negatives_per_edge: int = 5
    seed: int = 0
    init_scale: float | None = None  # defaults to 0.5 / dim

    def __post_init__(self):
        if self.dim < 1:
            raise EmbeddingError(f"dim must be >= 1, got {self.dim}")
        if self.learning_rate <= 0:
            raise EmbeddingError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise EmbeddingError(f"epochs must be >= 0, got {self.epochs}")
        if self.mode not in ("exact", "sampled"):
            raise EmbeddingError(f"mode must be 'exact' or 'sampled', got {self.mode!r}")
        if self.negatives_per_edge < 1:
            raise EmbeddingError(f"negatives_per_edge must be >= 1, got {self.negatives_per_edge}")

    @property
    def scale(self) -> float:
        return self.init_scale if self.init_scale is not None else 0.5 / self.dim


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _logsumexp(x: np.ndarray, axis=None):
    if axis is None:
        m = float(np.max(x))
        return m + float(np.log(np.sum(np.exp(x - m))))
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)), axis=axis)


def _vertex_order(graph: WeightedGraph):
    verts = sorted(graph.vertices)
    return verts, {v: i for i, v in enumerate(verts)}


def _edge_arrays(graph: WeightedGraph, index: dict):
    edges = graph.edges()
    ei = np.array([index[a] for a, _, _ in edges], dtype=np.int64)
    ej = np.array([index[b] for _, b, _ in edges], dtype=np.int64)
    w = np.array([w for _, _, w in edges], dtype=np.float64)
    return ei, ej, w


def _matrix_from_table(table: EmbeddingTable, verts: list, what: str) -> np.ndarray:
    rows = []
    for v in verts:
        if v not in table:
            raise EmbeddingError(f"{what} is missing a vector for entity ({v.namespace}, {v.id})")
        rows.append(table.vectors[v])
    return np.array(rows, dtype=np.float64)


def _init_matrix(rng: np.random.RandomState, n: int, config: EmbedConfig) -> np.ndarray:
    return rng.uniform(-config.scale, config.scale, size=(n, config.dim))


def _o1_value(emb, ei, ej, phat) -> float:
    dots = np.einsum("ij,ij->i", emb[ei], emb[ej])
    log_s = _log_sigmoid(dots)
    log_z = float(_logsumexp(log_s))
    return float(np.sum(phat * (np.log(phat) - log_s)) + log_z)


def _o1_gradient(emb, ei, ej, phat) -> np.ndarray:
    dots = np.einsum("ij,ij->i", emb[ei], emb[ej])
    s = _sigmoid(dots)
    p = s / np.sum(s)
    g = (p - phat) * (1.0 - s)
    grad = np.zeros_like(emb)
    np.add.at(grad, ei, g[:, None] * emb[ej])
    np.add.at(grad, ej, g[:, None] * emb[ei])
    return grad


def first_order_objective(graph: WeightedGraph, table: EmbeddingTable) -> float:
    """KL divergence of the empirical edge distribution from the model's
    normalized sigmoid edge distribution; >= 0."""
    if graph.num_edges == 0:
        raise GraphError("graph has no edges")
    verts, index = _vertex_order(graph)
    emb = _matrix_from_table(table, verts, "first-order table")
    ei, ej, w = _edge_arrays(graph, index)
    return _o1_value(emb, ei, ej, w / graph.total_weight)


def _descend(params: list, value_fn, grad_fn, config: EmbedConfig):
    """Full-batch gradient descent with halving on objective increase.

    Returns (params, history); history holds the objective at init and
    after each accepted step, nonincreasing by construction.
    """
    obj = value_fn(params)
    history = [obj]
    lr = config.learning_rate
    for _ in range(config.epochs):
        grads = grad_fn(params)
        accepted = False
        while lr >= _MIN_LR:
            candidate = [p - lr * g for p, g in zip(params, grads)]
            new_obj = value_fn(candidate)
            if new_obj <= obj:
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            break
        params, obj = candidate, new_obj
        history.append(obj)
        lr = min(lr * 1.2, config.learning_rate)
    return params, history


def _noise_distribution(graph: WeightedGraph, verts: list) -> np.ndarray:
    deg = np.array([graph.weighted_degree(v) for v in verts], dtype=np.float64)
    probs = deg**NOISE_POWER
    total = probs.sum()
    if total <= 0:
        raise GraphError("graph has no edges")
    return probs / total


def train_first_order(graph: WeightedGraph, config: EmbedConfig) -> EmbeddingTable:
    """Train first-order proximity embeddings; deterministic in (graph, config)."""
    if graph.num_edges == 0:
        raise GraphError("graph has no edges")
    verts, index = _vertex_order(graph)
    ei, ej, w = _edge_arrays(graph, index)
    phat = w / graph.total_weight
    rng = np.random.RandomState(config.seed)
    emb = _init_matrix(rng, len(verts), config)

    if config.mode == "exact":
        [emb], history = _descend(
            [emb],
            lambda ps: _o1_value(ps[0], ei, ej, phat),
            lambda ps: [_o1_gradient(ps[0], ei, ej, phat)],
            config,
        )
    else:
        edge_probs = w / w.sum()
        noise = _noise_distribution(graph, verts)
        m = len(ei)
        history = []
        for _ in range(config.epochs):
            picks = rng.choice(m, size=m, p=edge_probs)
            negs = rng.choice(len(verts), size=(m, config.negatives_per_edge), p=noise)
            loss = _kernels.first_order_epoch(emb, ei[picks], ej[picks], negs, config.learning_rate)
            history.append(loss / m)

    vectors = {v: emb[i].copy() for v, i in index.items()}
    return EmbeddingTable(config.dim, "first_order", vectors, history=history)


def _second_order_state(graph: WeightedGraph, verts: list, index: dict):
    n = len(verts)
    lam = np.array([graph.weighted_degree(v) for v in verts], dtype=np.float64)
    phat = np.zeros((n, n), dtype=np.float64)
    for a, b, w in graph.edges():
        ia, ib = index[a], index[b]
        phat[ia, ib] = w / lam[ia]
        phat[ib, ia] = w / lam[ib]
    return lam, phat


def _o2_value(U, C, lam, phat) -> float:
    logits = U @ C.T
    log_p = logits - _logsumexp(logits, axis=1)[:, None]
    support = phat > 0
    terms = np.where(support, phat * (np.log(np.where(support, phat, 1.0)) - log_p), 0.0)
    return float(np.sum(lam[:, None] * terms))


def _o2_gradient(U, C, lam, phat):
    logits = U @ C.T
    log_p = logits - _logsumexp(logits, axis=1)[:, None]
    m = lam[:, None] * (np.exp(log_p) - phat)
    return m @ C, m.T @ U


def second_order_objective(graph: WeightedGraph, vertex_table: EmbeddingTable,
                           context_table: EmbeddingTable) -> float:
    """Degree-weighted sum over vertices of the KL divergence of the
    empirical neighbor distribution from the full-softmax context model."""
    _require_no_isolated(graph)
    verts, index = _vertex_order(graph)
    U = _matrix_from_table(vertex_table, verts, "vertex table")
    C = _matrix_from_table(context_table, verts, "context table")
    if vertex_table.dim != context_table.dim:
        raise EmbeddingError("vertex and context tables must share dim")
    lam, phat = _second_order_state(graph, verts, index)
    return _o2_value(U, C, lam, phat)


def _require_no_isolated(graph: WeightedGraph) -> None:
    isolated = graph.isolated_vertices()
    if isolated:
        ids = ", ".join(str(v.id) for v in isolated[:10])
        raise GraphError(f"graph has isolated vertices (ids: {ids})")


def train_second_order(graph: WeightedGraph, config: EmbedConfig):
    """Train second-order embeddings; returns (vertex_table, context_table)."""
    _require_no_isolated(graph)
    if graph.num_edges == 0:
        raise GraphError("graph has no edges")
    verts, index = _vertex_order(graph)
    rng = np.random.RandomState(config.seed)
    U = _init_matrix(rng, len(verts), config)
    C = _init_matrix(rng, len(verts), config)

    if config.mode == "exact":
        lam, phat = _second_order_state(graph, verts, index)
        [U, C], history = _descend(
            [U, C],
            lambda ps: _o2_value(ps[0], ps[1], lam, phat),
            lambda ps: list(_o2_gradient(ps[0], ps[1], lam, phat)),
            config,
        )
    else:
        ei, ej, w = _edge_arrays(graph, index)
        # each undirected edge becomes two directed edges with the same weight
        src = np.concatenate([ei, ej])
        dst = np.concatenate([ej, ei])
        dw = np.concatenate([w, w])
        edge_probs = dw / dw.sum()
        noise = _noise_distribution(graph, verts)
        m = len(src)
        history = []
        for _ in range(config.epochs):
            picks = rng.choice(m, size=m, p=edge_probs)
            negs = rng.choice(len(verts), size=(m, config.negatives_per_edge), p=noise)
            loss = _kernels.second_order_epoch(U, C, src[picks], dst[picks], negs, config.learning_rate)
            history.append(loss / m)

    vectors_u = {v: U[i].copy() for v, i in index.items()}
    vectors_c = {v: C[i].copy() for v, i in index.items()}
    return (
        EmbeddingTable(config.dim, "second_order_vertex", vectors_u, history=history),
        EmbeddingTable(config.dim, "second_order_context", vectors_c),
    )


def concat_embeddings(first: EmbeddingTable, second_vertex: EmbeddingTable) -> EmbeddingTable:
    """Concatenate per-entity vectors, first-order components first."""
    if set(first.vectors) != set(second_vertex.vectors):
        raise EmbeddingError("tables cover different entity sets")
    vectors = {
        e: np.concatenate([first.vectors[e], second_vertex.vectors[e]]) for e in first.vectors
    }
    return EmbeddingTable(first.dim + second_vertex.dim, "concat", vectors)


def pool(bag, table: EmbeddingTable, mode: str = "mean"):
    """Pool the vectors of bag entities found in the table.

    Returns (vector, coverage) where coverage is the fraction of the bag
    present in the table; an empty effective bag yields the zero vector.
    """
    if mode not in ("mean", "max"):
        raise EmbeddingError(f"pool mode must be 'mean' or 'max', got {mode!r}")
    found = [table.vectors[e] for e in sorted(bag) if e in table]
    if not found:
        return np.zeros(table.dim), 0.0
    stacked = np.array(found)
    vec = stacked.mean(axis=0) if mode == "mean" else stacked.max(axis=0)
    return vec, len(found) / len(bag)


def similarity(m: np.ndarray, q: np.ndarray, measure: str) -> np.ndarray:
    """Similarity between pooled member and query vectors.

    dot and cosine return a length-1 vector; hadamard returns the
    element-wise product. Cosine of a zero vector is 0 by convention.
    """
    m = np.asarray(m, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if m.shape != q.shape:
        raise EmbeddingError(f"vector length mismatch: {m.shape} vs {q.shape}")
    if measure == "dot":
        return np.array([float(m @ q)])
    if measure == "cosine":
        nm = float(np.linalg.norm(m))
        nq = float(np.linalg.norm(q))
        if nm == 0.0 or nq == 0.0:
            return np.array([0.0])
        return np.array([float(m @ q) / (nm * nq)])
    if measure == "hadamard":
        return m * q
    raise EmbeddingError(f"unknown similarity measure {measure!r}")
