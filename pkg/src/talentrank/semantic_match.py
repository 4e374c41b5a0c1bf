"""Supervised two-arm semantic matching: character-trigram word hashing
plus entity-id indicators feed separate query and member projection arms
that meet in a shared space; similarity there scores the pair, and trained
arms export per-entity embedding dictionaries.

Training minimizes softmax cross-entropy of the positive member against
sampled negatives from the same session (corpus-random fallback), with a
similarity smoothing factor gamma.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import NAMESPACES, EntityId, ProfileStore, Query, SessionStore
from .fileio import atomic_write, fmt_float
from .graph_embed import EmbeddingTable
from .neural import Layer, layers_from_lines, layers_to_lines


class SemanticError(ValueError):
    """Invalid semantic-model configuration or input."""


def word_hash(text: str) -> Counter:
    """Multiset of boundary-padded character trigrams per whitespace token."""
    grams: Counter = Counter()
    for token in text.lower().split():
        padded = f"#{token}#"
        for i in range(len(padded) - 2):
            grams[padded[i : i + 3]] += 1
    return grams


@dataclass(frozen=True)
class TrigramVocabulary:
    index: dict  # trigram -> dense index 0..size-1

    @property
    def size(self) -> int:
        return len(self.index)

    @classmethod
    def build(cls, texts) -> "TrigramVocabulary":
        grams = set()
        for text in texts:
            grams.update(word_hash(text))
        return cls({g: i for i, g in enumerate(sorted(grams))})


def build_entity_vocabs(profiles: ProfileStore, sessions: SessionStore) -> dict:
    """Dense per-namespace entity indices from profiles and session facets."""
    seen = {ns: set() for ns in NAMESPACES}
    for profile in profiles:
        for ns in NAMESPACES:
            seen[ns].update(profile.entities(ns))
    for session in sessions:
        for ns in NAMESPACES:
            seen[ns].update(session.query.facet(ns))
    return {ns: {e: i for i, e in enumerate(sorted(seen[ns]))} for ns in NAMESPACES}


def input_width(trigram_vocab: TrigramVocabulary, entity_vocabs: dict) -> int:
    return trigram_vocab.size + sum(len(entity_vocabs.get(ns, {})) for ns in NAMESPACES)


def build_input(keywords: str, bags: dict, trigram_vocab: TrigramVocabulary,
                entity_vocabs: dict) -> np.ndarray:
    """Sparse-as-dense input: trigram counts, then per-namespace entity
    indicators in skill, title, company order. Unknown trigrams and entity
    ids contribute nothing."""
    x = np.zeros(input_width(trigram_vocab, entity_vocabs), dtype=np.float64)
    for gram, count in word_hash(keywords).items():
        idx = trigram_vocab.index.get(gram)
        if idx is not None:
            x[idx] = count
    offset = trigram_vocab.size
    for ns in NAMESPACES:
        vocab = entity_vocabs.get(ns, {})
        for e in bags.get(ns, ()):
            idx = vocab.get(e)
            if idx is not None:
                x[offset + idx] = 1.0
        offset += len(vocab)
    return x


def query_input(query: Query, trigram_vocab, entity_vocabs) -> np.ndarray:
    bags = {ns: query.facet(ns) for ns in NAMESPACES}
    return build_input(query.keywords, bags, trigram_vocab, entity_vocabs)


def member_input(profile, trigram_vocab, entity_vocabs) -> np.ndarray:
    bags = {ns: profile.entities(ns) for ns in NAMESPACES}
    return build_input(profile.headline_text, bags, trigram_vocab, entity_vocabs)


@dataclass(frozen=True)
class DssmConfig:
    hidden_layers: tuple = (200, 100)
    output_dim: int = 50
    similarity: str = "cosine"
    gamma: float = 10.0
    negatives: int = 4
    learning_rate: float = 0.05
    epochs: int = 5
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.output_dim < 1:
            raise SemanticError("output_dim must be >= 1")
        if self.similarity not in ("dot", "cosine"):
            raise SemanticError(f"similarity must be 'dot' or 'cosine', got {self.similarity!r}")
        if self.negatives < 1:
            raise SemanticError("negatives must be >= 1 (the softmax loss is vacuous without them)")
        if self.gamma <= 0 or self.learning_rate <= 0:
            raise SemanticError("gamma and learning_rate must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise SemanticError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class DssmModel:
    trigram_vocab: TrigramVocabulary
    entity_vocabs: dict
    query_arm: list  # tanh layers
    doc_arm: list
    similarity: str
    gamma: float
    history: list | None = None  # per-epoch mean training loss

    @property
    def input_width(self) -> int:
        return input_width(self.trigram_vocab, self.entity_vocabs)

    @property
    def output_dim(self) -> int:
        return self.query_arm[-1].weight.shape[0]

    def save(self, path: str) -> None:
        lines = [
            "talentrank-dssm v1",
            f"similarity {self.similarity}",
            f"gamma {fmt_float(self.gamma)}",
            "trigram_vocab " + json.dumps(_ordered_trigrams(self.trigram_vocab)),
        ]
        for ns in NAMESPACES:
            ids = [e.id for e in _ordered_entities(self.entity_vocabs.get(ns, {}))]
            lines.append(f"entity_vocab {ns} " + json.dumps(ids))
        lines.append("query_arm")
        lines.extend(layers_to_lines(self.query_arm))
        lines.append("doc_arm")
        lines.extend(layers_to_lines(self.doc_arm))
        with atomic_write(path) as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str) -> "DssmModel":
        with open(path, encoding="utf-8") as f:
            lines = [line.rstrip("\n") for line in f]
        if not lines or lines[0] != "talentrank-dssm v1":
            raise SemanticError(f"unrecognized model file header: {lines[:1]!r}")
        similarity = lines[1].split(" ", 1)[1]
        gamma = float(lines[2].split(" ", 1)[1])
        grams = json.loads(lines[3].split(" ", 1)[1])
        trigram_vocab = TrigramVocabulary({g: i for i, g in enumerate(grams)})
        entity_vocabs = {}
        pos = 4
        for ns in NAMESPACES:
            tag, got_ns, payload = lines[pos].split(" ", 2)
            if tag != "entity_vocab" or got_ns != ns:
                raise SemanticError(f"expected entity_vocab {ns}, got {lines[pos]!r}")
            ids = json.loads(payload)
            entity_vocabs[ns] = {EntityId(ns, i): idx for idx, i in enumerate(ids)}
            pos += 1
        if lines[pos] != "query_arm":
            raise SemanticError("expected query_arm section")
        query_arm, pos = layers_from_lines(lines, pos + 1)
        if lines[pos] != "doc_arm":
            raise SemanticError("expected doc_arm section")
        doc_arm, pos = layers_from_lines(lines, pos + 1)
        return cls(trigram_vocab, entity_vocabs, query_arm, doc_arm, similarity, gamma)


def _ordered_trigrams(vocab: TrigramVocabulary) -> list:
    return [g for g, _ in sorted(vocab.index.items(), key=lambda kv: kv[1])]


def _ordered_entities(vocab: dict) -> list:
    return [e for e, _ in sorted(vocab.items(), key=lambda kv: kv[1])]


def init_dssm(trigram_vocab: TrigramVocabulary, entity_vocabs: dict,
              config: DssmConfig) -> DssmModel:
    """Glorot-initialized two-arm model; query arm drawn first."""
    rng = np.random.RandomState(config.seed)
    width = input_width(trigram_vocab, entity_vocabs)
    widths = list(config.hidden_layers) + [config.output_dim]

    def make_arm():
        arm = []
        fan_in = width
        for out in widths:
            bound = np.sqrt(6.0 / (fan_in + out))
            arm.append(Layer(rng.uniform(-bound, bound, (out, fan_in)), np.zeros(out), "tanh"))
            fan_in = out
        return arm

    return DssmModel(trigram_vocab, entity_vocabs, make_arm(), make_arm(),
                     config.similarity, config.gamma)


def _arm_forward(layers, X: np.ndarray):
    h = np.asarray(X, dtype=np.float64)
    inputs, raws = [], []
    for layer in layers:
        inputs.append(h)
        h = np.tanh(h @ layer.weight.T + layer.bias)
        raws.append(h)
    return h, (inputs, raws)


def _arm_backward(layers, cache, dout: np.ndarray):
    inputs, raws = cache
    grads = [None] * len(layers)
    dh = dout
    for idx in range(len(layers) - 1, -1, -1):
        a = raws[idx]
        dz = dh * (1.0 - a * a)
        grads[idx] = (dz.T @ inputs[idx], dz.sum(axis=0))
        dh = dz @ layers[idx].weight
    return grads


def _sim_and_grads(q_vec: np.ndarray, d_vec: np.ndarray, measure: str):
    """Similarity value with gradients w.r.t. both vectors."""
    if measure == "dot":
        return float(q_vec @ d_vec), d_vec.copy(), q_vec.copy()
    nq = float(np.linalg.norm(q_vec))
    nd = float(np.linalg.norm(d_vec))
    if nq == 0.0 or nd == 0.0:
        return 0.0, np.zeros_like(q_vec), np.zeros_like(d_vec)
    s = float(q_vec @ d_vec) / (nq * nd)
    dq = d_vec / (nq * nd) - s * q_vec / (nq * nq)
    dd = q_vec / (nq * nd) - s * d_vec / (nd * nd)
    return s, dq, dd


def dssm_forward(model: DssmModel, q_input: np.ndarray, d_input: np.ndarray):
    """Project both inputs to the shared space; returns (q_vec, d_vec, sim)."""
    q_input = np.asarray(q_input, dtype=np.float64)
    d_input = np.asarray(d_input, dtype=np.float64)
    if q_input.shape != (model.input_width,) or d_input.shape != (model.input_width,):
        raise SemanticError(
            f"inputs must have shape ({model.input_width},), got {q_input.shape} and {d_input.shape}"
        )
    q_vec, _ = _arm_forward(model.query_arm, q_input[None, :])
    d_vec, _ = _arm_forward(model.doc_arm, d_input[None, :])
    q_vec, d_vec = q_vec[0], d_vec[0]
    sim, _, _ = _sim_and_grads(q_vec, d_vec, model.similarity)
    return q_vec, d_vec, sim


def _group_loss_and_grads(model: DssmModel, q_row: np.ndarray, doc_rows: np.ndarray,
                          gamma: float):
    """Softmax cross-entropy of the positive (row 0) against the group.

    Returns (loss, dL/dq_input-vec gradients propagated into arm caches).
    """
    q_vec, q_cache = _arm_forward(model.query_arm, q_row[None, :])
    d_vecs, d_cache = _arm_forward(model.doc_arm, doc_rows)
    q_vec = q_vec[0]
    sims = np.empty(len(d_vecs))
    dq_parts = []
    dd_parts = []
    for idx, d_vec in enumerate(d_vecs):
        s, dq, dd = _sim_and_grads(q_vec, d_vec, model.similarity)
        sims[idx] = s
        dq_parts.append(dq)
        dd_parts.append(dd)
    z = gamma * sims
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    loss = -float(np.log(max(p[0], 1e-300)))
    dsims = gamma * p
    dsims[0] -= gamma
    dq_vec = sum(dsims[i] * dq_parts[i] for i in range(len(d_vecs)))
    dd_vecs = np.array([dsims[i] * dd_parts[i] for i in range(len(d_vecs))])
    q_grads = _arm_backward(model.query_arm, q_cache, dq_vec[None, :])
    d_grads = _arm_backward(model.doc_arm, d_cache, dd_vecs)
    return loss, q_grads, d_grads


def _group_loss(model: DssmModel, q_row, doc_rows, gamma: float) -> float:
    q_vec, _ = _arm_forward(model.query_arm, q_row[None, :])
    d_vecs, _ = _arm_forward(model.doc_arm, doc_rows)
    q_vec = q_vec[0]
    sims = np.array([_sim_and_grads(q_vec, d, model.similarity)[0] for d in d_vecs])
    z = gamma * sims
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return -float(np.log(max(p[0], 1e-300)))


def _build_groups(sessions: SessionStore, profiles: ProfileStore, config: DssmConfig,
                  rng: np.random.RandomState):
    """One group per positive impression: [positive, N negatives] member ids.

    In-session negatives are preferred; the shortfall is filled with
    corpus-random members distinct from the group.
    """
    member_ids = profiles.member_ids()
    if len(member_ids) <= config.negatives:
        raise SemanticError("profile store too small for the configured negative count")
    groups = []
    for session in sessions:
        positives = [i for i in session.impressions if i.label == 1]
        negatives = [i.member_id for i in sorted(
            (i for i in session.impressions if i.label == 0), key=lambda i: i.position)]
        for pos in sorted(positives, key=lambda i: i.position):
            if len(negatives) >= config.negatives:
                chosen_idx = rng.choice(len(negatives), size=config.negatives, replace=False)
                chosen = [negatives[i] for i in chosen_idx]
            else:
                chosen = list(negatives)
                taken = set(chosen) | {pos.member_id}
                while len(chosen) < config.negatives:
                    mid = member_ids[rng.randint(len(member_ids))]
                    if mid in taken:
                        continue
                    chosen.append(mid)
                    taken.add(mid)
            groups.append((session.session_id, [pos.member_id] + chosen))
    if not groups:
        raise SemanticError("no positive impressions in the training sessions")
    return groups


def train_dssm(sessions: SessionStore, profiles: ProfileStore, config: DssmConfig) -> DssmModel:
    """Train the two-arm model on positive impressions; seed-deterministic."""
    trigram_vocab = TrigramVocabulary.build(
        [s.query.keywords for s in sessions] + [p.headline_text for p in profiles]
    )
    entity_vocabs = build_entity_vocabs(profiles, sessions)
    model = init_dssm(trigram_vocab, entity_vocabs, config)
    rng = np.random.RandomState(config.seed)
    groups = _build_groups(sessions, profiles, config, rng)

    query_rows = {
        s.session_id: query_input(s.query, trigram_vocab, entity_vocabs) for s in sessions
    }
    doc_rows: dict[int, np.ndarray] = {}

    def doc_row(mid: int) -> np.ndarray:
        if mid not in doc_rows:
            if mid not in profiles:
                raise SemanticError(f"member {mid} not in profile store")
            doc_rows[mid] = member_input(profiles[mid], trigram_vocab, entity_vocabs)
        return doc_rows[mid]

    history = []
    for _ in range(config.epochs):
        perm = rng.permutation(len(groups))
        for start in range(0, len(perm), config.batch_size):
            batch = [groups[i] for i in perm[start : start + config.batch_size]]
            agg_q = None
            agg_d = None
            for sid, mids in batch:
                docs = np.array([doc_row(m) for m in mids])
                _, q_grads, d_grads = _group_loss_and_grads(
                    model, query_rows[sid], docs, config.gamma
                )
                agg_q = q_grads if agg_q is None else [
                    (w1 + w2, b1 + b2) for (w1, b1), (w2, b2) in zip(agg_q, q_grads)
                ]
                agg_d = d_grads if agg_d is None else [
                    (w1 + w2, b1 + b2) for (w1, b1), (w2, b2) in zip(agg_d, d_grads)
                ]
            scale = config.learning_rate / len(batch)
            for layer, (dw, db) in zip(model.query_arm, agg_q):
                layer.weight -= scale * dw
                layer.bias -= scale * db
            for layer, (dw, db) in zip(model.doc_arm, agg_d):
                layer.weight -= scale * dw
                layer.bias -= scale * db
        epoch_loss = float(np.mean([
            _group_loss(model, query_rows[sid], np.array([doc_row(m) for m in mids]), config.gamma)
            for sid, mids in groups
        ]))
        history.append(epoch_loss)
    model.history = history
    return model


def dssm_scorer(model: DssmModel):
    """Adapt a trained model to the replay scorer signature (query, profile)."""
    cache: dict[int, np.ndarray] = {}

    def scorer(query: Query, profile) -> float:
        q = query_input(query, model.trigram_vocab, model.entity_vocabs)
        if profile.member_id not in cache:
            cache[profile.member_id] = member_input(profile, model.trigram_vocab,
                                                    model.entity_vocabs)
        _, _, sim = dssm_forward(model, q, cache[profile.member_id])
        return sim

    return scorer


def export_embeddings(model: DssmModel, entity_vocabs: dict | None = None) -> dict:
    """Per-namespace supervised embedding tables: the query-arm output on
    the one-hot input that sets only the entity's indicator."""
    vocabs = entity_vocabs if entity_vocabs is not None else model.entity_vocabs
    width = model.input_width
    offsets = {}
    offset = model.trigram_vocab.size
    for ns in NAMESPACES:
        offsets[ns] = offset
        offset += len(model.entity_vocabs.get(ns, {}))
    tables = {}
    for ns in NAMESPACES:
        vocab = vocabs.get(ns, {})
        vectors = {}
        # one row at a time through the same path dssm_forward uses, so the
        # exported vector is bit-identical to a forward on the one-hot input
        for e in _ordered_entities(vocab):
            x = np.zeros((1, width))
            idx = model.entity_vocabs.get(ns, {}).get(e)
            if idx is not None:
                x[0, offsets[ns] + idx] = 1.0
            vec, _ = _arm_forward(model.query_arm, x)
            vectors[e] = vec[0].copy()
        tables[ns] = EmbeddingTable(model.output_dim, "supervised", vectors)
    return tables
