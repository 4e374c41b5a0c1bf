"""Feature assembly, session pair mining, and end-to-end ranker training.

Features combine syntactic facet overlap (jaccard, keyword trigram
overlap) with similarity between pooled query and member embedding
vectors; the scoring network trains under a pointwise or pairwise
objective with session-based pair mining.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .corpus import ProfileStore, Query, Session, SessionStore
from .evaluation import precision_at_k
from .fileio import atomic_write
from .graph_embed import EmbeddingTable, pool, similarity
from .neural import (
    MlpModel,
    TrainConfig,
    add_grads,
    init_mlp,
    mlp_forward,
    mlp_forward_batch,
    mlp_backward,
    mlp_from_lines,
    mlp_to_lines,
    pairwise_loss,
    pointwise_loss,
    sgd_step,
)
from .semantic_match import word_hash

EMBEDDING_MEASURES = ("dot", "cosine")


class RankerError(ValueError):
    """Invalid schema, missing data, or bad training configuration."""


@dataclass(frozen=True)
class FeatureSchema:
    """Fixed, ordered feature layout shared by training and scoring."""

    jaccard_namespaces: tuple = ("skill", "title", "company")
    use_keyword_trigrams: bool = True
    embedding_namespaces: tuple = ()
    embedding_measures: tuple = ("dot",)
    include_hadamard: bool = False
    embedding_dim: int = 0  # required for the hadamard block width
    include_coverage: bool = True

    def __post_init__(self):
        for m in self.embedding_measures:
            if m not in EMBEDDING_MEASURES:
                raise RankerError(f"unknown embedding measure {m!r}")
        if self.include_hadamard and self.embedding_dim < 1:
            raise RankerError("include_hadamard requires embedding_dim >= 1")
        if self.embedding_namespaces and not (
            self.embedding_measures or self.include_hadamard
        ):
            raise RankerError("embedding namespaces given but no measures selected")

    def feature_names(self) -> list:
        names = [f"{ns}_jaccard" for ns in self.jaccard_namespaces]
        if self.use_keyword_trigrams:
            names.append("keyword_trigram_overlap")
        for ns in self.embedding_namespaces:
            for m in self.embedding_measures:
                names.append(f"emb_{m}_{ns}")
            if self.include_hadamard:
                names.extend(f"emb_hadamard_{ns}_{i}" for i in range(self.embedding_dim))
            if self.include_coverage:
                names.append(f"coverage_member_{ns}")
                names.append(f"coverage_query_{ns}")
        return names

    @property
    def width(self) -> int:
        return len(self.feature_names())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        obj = json.loads(text)
        for key in ("jaccard_namespaces", "embedding_namespaces", "embedding_measures"):
            obj[key] = tuple(obj[key])
        return cls(**obj)


def _jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


@lru_cache(maxsize=65536)
def _trigram_set(text: str) -> frozenset:
    return frozenset(word_hash(text))


def _trigram_overlap(a: str, b: str) -> float:
    sa = _trigram_set(a)
    sb = _trigram_set(b)
    if not sa and not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def _features_from_pools(query: Query, profile, pools_q: dict, pools_m: dict,
                         schema: FeatureSchema) -> np.ndarray:
    feats = []
    for ns in schema.jaccard_namespaces:
        feats.append(_jaccard(query.facet(ns), profile.entities(ns)))
    if schema.use_keyword_trigrams:
        feats.append(_trigram_overlap(query.keywords, profile.headline_text))
    for ns in schema.embedding_namespaces:
        q_vec, q_cov = pools_q[ns]
        m_vec, m_cov = pools_m[ns]
        for m in schema.embedding_measures:
            feats.append(float(similarity(m_vec, q_vec, m)[0]))
        if schema.include_hadamard:
            feats.extend(similarity(m_vec, q_vec, "hadamard"))
        if schema.include_coverage:
            feats.append(m_cov)
            feats.append(q_cov)
    return np.array(feats, dtype=np.float64)


def query_pools(query: Query, tables: dict, schema: FeatureSchema) -> dict:
    """Pooled (vector, coverage) per embedding namespace for a query facet."""
    return {ns: pool(query.facet(ns), _table_for(tables, ns, schema)) for ns in schema.embedding_namespaces}


def member_pools(profile, tables: dict, schema: FeatureSchema) -> dict:
    """Pooled (vector, coverage) per embedding namespace for a member profile."""
    return {ns: pool(profile.entities(ns), _table_for(tables, ns, schema)) for ns in schema.embedding_namespaces}


def _table_for(tables: dict, ns: str, schema: FeatureSchema) -> EmbeddingTable:
    try:
        table = tables[ns]
    except KeyError:
        raise RankerError(f"no embedding table for namespace {ns!r}") from None
    if schema.include_hadamard and table.dim != schema.embedding_dim:
        raise RankerError(
            f"table for {ns!r} has dim {table.dim}, schema expects {schema.embedding_dim}"
        )
    return table


def assemble_features(query: Query, profile, tables: dict, schema: FeatureSchema) -> np.ndarray:
    """Deterministic feature vector for a (query, member) pair."""
    pools_q = query_pools(query, tables, schema)
    pools_m = member_pools(profile, tables, schema)
    return _features_from_pools(query, profile, pools_q, pools_m, schema)


def mine_pairs(session: Session) -> list:
    """All (positive, negative) impression pairs within a session, ordered
    by (positive position, negative position)."""
    pos = sorted((i for i in session.impressions if i.label == 1), key=lambda i: i.position)
    neg = sorted((i for i in session.impressions if i.label == 0), key=lambda i: i.position)
    return [(p, n) for p in pos for n in neg]


@dataclass
class RankingModel:
    schema: FeatureSchema
    net: MlpModel
    objective: str
    seed: int
    epochs_run: int

    def save(self, path: str) -> None:
        lines = [
            "talentrank-ranker v1",
            f"objective {self.objective}",
            f"seed {self.seed}",
            f"epochs_run {self.epochs_run}",
            "schema " + self.schema.to_json(),
        ]
        lines.extend(mlp_to_lines(self.net))
        with atomic_write(path) as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str) -> "RankingModel":
        with open(path, encoding="utf-8") as f:
            lines = [line.rstrip("\n") for line in f]
        if not lines or lines[0] != "talentrank-ranker v1":
            raise RankerError(f"unrecognized model file header: {lines[:1]!r}")
        objective = lines[1].split(" ", 1)[1]
        seed = int(lines[2].split(" ", 1)[1])
        epochs_run = int(lines[3].split(" ", 1)[1])
        schema = FeatureSchema.from_json(lines[4].split(" ", 1)[1])
        net, _ = mlp_from_lines(lines, 5)
        if net.input_width != schema.width:
            raise RankerError(
                f"model input width {net.input_width} does not match schema width {schema.width}"
            )
        return cls(schema, net, objective, seed, epochs_run)


@dataclass
class _Dataset:
    X: np.ndarray
    y: np.ndarray
    member_ids: np.ndarray
    session_slices: list  # (start, end) per session, session_id ascending
    pairs: np.ndarray  # (m, 2) example indices (positive, negative)


def _build_dataset(sessions: SessionStore, profiles: ProfileStore, tables: dict,
                   schema: FeatureSchema) -> _Dataset:
    rows, labels, member_ids, slices, pairs = [], [], [], [], []
    pool_memo: dict[int, dict] = {}  # member pools reused across sessions
    cursor = 0
    for session in sessions:
        pools_q = query_pools(session.query, tables, schema)
        index_of = {}
        for imp in session.impressions:
            if imp.member_id not in profiles:
                raise RankerError(
                    f"session {session.session_id}: member {imp.member_id} not in profile store"
                )
            profile = profiles[imp.member_id]
            if imp.member_id not in pool_memo:
                pool_memo[imp.member_id] = member_pools(profile, tables, schema)
            rows.append(
                _features_from_pools(session.query, profile, pools_q,
                                     pool_memo[imp.member_id], schema)
            )
            labels.append(imp.label)
            member_ids.append(imp.member_id)
            index_of[imp.member_id] = cursor
            cursor += 1
        slices.append((cursor - len(session.impressions), cursor))
        for p, n in mine_pairs(session):
            pairs.append((index_of[p.member_id], index_of[n.member_id]))
    X = np.array(rows, dtype=np.float64) if rows else np.zeros((0, schema.width))
    return _Dataset(
        X=X,
        y=np.array(labels, dtype=np.float64),
        member_ids=np.array(member_ids, dtype=np.int64),
        session_slices=slices,
        pairs=np.array(pairs, dtype=np.int64).reshape(-1, 2),
    )


def _pointwise_epoch(net, ds, config, rng):
    perm = rng.permutation(len(ds.y))
    for start in range(0, len(perm), config.batch_size):
        idx = perm[start : start + config.batch_size]
        scores, cache = mlp_forward_batch(net, ds.X[idx], training=True,
                                          dropout_rate=config.dropout_rate, rng=rng)
        _, grads = pointwise_loss(scores, ds.y[idx])
        sgd_step(net, mlp_backward(net, cache, grads / len(idx)),
                 config.learning_rate, config.l2_penalty)


def _pairwise_epoch(net, ds, config, rng, kind):
    perm = rng.permutation(ds.pairs.shape[0])
    for start in range(0, len(perm), config.batch_size):
        batch = ds.pairs[perm[start : start + config.batch_size]]
        sp, cache_p = mlp_forward_batch(net, ds.X[batch[:, 0]], training=True,
                                        dropout_rate=config.dropout_rate, rng=rng)
        sn, cache_n = mlp_forward_batch(net, ds.X[batch[:, 1]], training=True,
                                        dropout_rate=config.dropout_rate, rng=rng)
        _, df = pairwise_loss(sp - sn, kind)
        df = df / len(batch)
        grads = add_grads(
            mlp_backward(net, cache_p, df), mlp_backward(net, cache_n, -df)
        )
        sgd_step(net, grads, config.learning_rate, config.l2_penalty)


def _mean_precision(net, ds, k: int) -> float:
    scores, _ = mlp_forward_batch(net, ds.X)
    vals = []
    for start, end in ds.session_slices:
        order = sorted(range(start, end), key=lambda i: (-scores[i], ds.member_ids[i]))
        vals.append(precision_at_k([int(ds.y[i]) for i in order], k))
    return float(np.mean(vals))


def _mean_loss(net, ds, kind) -> float:
    scores, _ = mlp_forward_batch(net, ds.X)
    if kind is None or ds.pairs.shape[0] == 0:
        total, _ = pointwise_loss(scores, ds.y)
        return total / len(ds.y)
    f, _ = pairwise_loss(scores[ds.pairs[:, 0]] - scores[ds.pairs[:, 1]], kind)
    return float(np.mean(f))


def train_ranker(train: SessionStore, valid: SessionStore, profiles: ProfileStore,
                 tables: dict, schema: FeatureSchema, config: TrainConfig) -> RankingModel:
    """Train a ranking model; returns the best-on-validation parameters.

    Early stopping monitors validation Prec@25 when the validation split
    has at least 10 sessions, otherwise the validation loss; with an empty
    validation split the final-epoch parameters are returned.
    """
    if len(train) == 0:
        raise RankerError("train split is empty")
    ds_train = _build_dataset(train, profiles, tables, schema)
    kind = config.pairwise_kind
    if kind is not None and ds_train.pairs.shape[0] == 0:
        raise RankerError("pairwise objective requires at least one positive-negative pair")

    net = init_mlp(schema.width, config.hidden_layers, config.activation, config.seed)
    rng = np.random.RandomState(config.seed)
    ds_valid = _build_dataset(valid, profiles, tables, schema) if len(valid) else None
    monitor = None
    if ds_valid is not None:
        monitor = "prec" if len(valid) >= 10 else "loss"

    best_metric = None
    best_net = None
    best_epoch = 0
    stale = 0
    epochs_run = 0
    for epoch in range(config.epochs):
        if kind is None:
            _pointwise_epoch(net, ds_train, config, rng)
        else:
            _pairwise_epoch(net, ds_train, config, rng, kind)
        epochs_run = epoch + 1
        if monitor is None:
            continue
        # ties count as improvement (keep the latest), so a plateaued
        # metric lets training run on instead of freezing epoch 1
        if monitor == "prec":
            metric = _mean_precision(net, ds_valid, 25)
            improved = best_metric is None or metric >= best_metric
        else:
            metric = _mean_loss(net, ds_valid, kind)
            improved = best_metric is None or metric <= best_metric
        if improved:
            best_metric, best_net, best_epoch = metric, net.copy(), epochs_run
            stale = 0
        else:
            stale += 1
            if stale > config.early_stop_patience:
                break
    if best_net is not None:
        net = best_net
        epochs_run = best_epoch
    return RankingModel(schema=schema, net=net, objective=config.objective,
                        seed=config.seed, epochs_run=epochs_run)


def score(model: RankingModel, query: Query, member_id: int, profiles: ProfileStore,
          tables: dict) -> float:
    """Assemble features and score one (query, member) pair, dropout off."""
    if member_id not in profiles:
        raise RankerError(f"member {member_id} not in profile store")
    x = assemble_features(query, profiles[member_id], tables, model.schema)
    value, _ = mlp_forward(model.net, x)
    return value


def make_scorer(model: RankingModel, tables: dict):
    """Adapt a RankingModel to the replay scorer signature (query, profile).

    Pooled query and member embeddings are cached across calls; the stores
    replay runs over are immutable, so member_id keys are stable.
    """
    schema = model.schema
    q_memo: dict = {}
    m_memo: dict = {}

    def scorer(query: Query, profile) -> float:
        if query not in q_memo:
            q_memo[query] = query_pools(query, tables, schema)
        if profile.member_id not in m_memo:
            m_memo[profile.member_id] = member_pools(profile, tables, schema)
        x = _features_from_pools(query, profile, q_memo[query], m_memo[profile.member_id], schema)
        value, _ = mlp_forward(model.net, x)
        return value

    return scorer
