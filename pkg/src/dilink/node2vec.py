"""Second-order biased random walks and skip-gram training for node features.

Walks run over the undirected view of a (sub-)graph. Embedding rows are
initialized per (seed, node id) through a stable hash, so a node gets the
same starting vector in every table trained under one seed; isolated nodes
keep exactly that vector.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .nn import sigmoid

DEFAULT_WALK_LENGTH = 20
DEFAULT_WALKS_PER_NODE = 100
DEFAULT_EMBEDDING_DIM = 32


@dataclass(frozen=True)
class WalkConfig:
    walk_length: int = DEFAULT_WALK_LENGTH
    walks_per_node: int = DEFAULT_WALKS_PER_NODE
    p: float = 1.0
    q: float = 1.0
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    window: int = 10
    negatives_per_positive: int = 5
    epochs: int = 5
    learning_rate: float = 0.025

    def __post_init__(self) -> None:
        if self.walk_length < 1 or self.walks_per_node < 1:
            raise ValueError("walk_length and walks_per_node must be >= 1")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")


def seeded_node_vector(node_id: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic per-node initialization, independent of table composition."""
    digest = zlib.crc32(f"{seed}:{node_id}".encode("utf-8"))
    rng = np.random.default_rng(np.random.SeedSequence([seed, digest]))
    return rng.uniform(-0.5, 0.5, size=dim) / dim


def transition_distribution(
    prev: str | None, curr: str, graph, p: float, q: float
) -> dict[str, float]:
    """node2vec bias rule: 1/p back to prev, 1 to prev's neighbors, 1/q otherwise."""
    neighbors = graph.undirected_neighbors(curr)
    if not neighbors:
        raise ValueError(f"node {curr!r} has no neighbors")
    if prev is None:
        weight = 1.0 / len(neighbors)
        return {nbr: weight for nbr in neighbors}
    prev_neighbors = set(graph.undirected_neighbors(prev))
    weights = {}
    for nbr in neighbors:
        if nbr == prev:
            weights[nbr] = 1.0 / p
        elif nbr in prev_neighbors:
            weights[nbr] = 1.0
        else:
            weights[nbr] = 1.0 / q
    total = sum(weights.values())
    return {nbr: w / total for nbr, w in weights.items()}


def generate_walks(graph, config: WalkConfig, seed: int = 0) -> list[list[str]]:
    """walks_per_node walks from every node, each deterministic per (seed, node, walk)."""
    walks: list[list[str]] = []
    for node_idx, start in enumerate(graph.node_ids):
        for walk_idx in range(config.walks_per_node):
            rng = np.random.default_rng(np.random.SeedSequence([seed, node_idx, walk_idx]))
            walk = [start]
            prev: str | None = None
            while len(walk) < config.walk_length:
                curr = walk[-1]
                if not graph.undirected_neighbors(curr):
                    break
                dist = transition_distribution(prev, curr, graph, config.p, config.q)
                choices = list(dist)
                probs = np.array([dist[c] for c in choices])
                nxt = choices[int(rng.choice(len(choices), p=probs / probs.sum()))]
                walk.append(nxt)
                prev = curr
            walks.append(walk)
    return walks


def _skipgram_pairs(walks: list[list[str]], window: int, index: dict[str, int]) -> np.ndarray:
    pairs = []
    for walk in walks:
        ids = [index[n] for n in walk]
        for pos, center in enumerate(ids):
            lo = max(0, pos - window)
            hi = min(len(ids), pos + window + 1)
            for ctx in range(lo, hi):
                if ctx != pos:
                    pairs.append((center, ids[ctx]))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    return np.asarray(pairs, dtype=np.int64)


def train_skipgram(
    walks: list[list[str]], config: WalkConfig, seed: int = 0
) -> dict[str, np.ndarray]:
    """Skip-gram with negative sampling; returns the center-embedding table.

    Negatives come from the walk-corpus unigram distribution raised to 0.75.
    Updates run in fixed-order mini-batches so results are seed-deterministic.
    """
    node_ids, centers, _ = train_skipgram_tables(walks, config, seed=seed)
    return {n: centers[i].copy() for i, n in enumerate(node_ids)}


def train_skipgram_tables(
    walks: list[list[str]], config: WalkConfig, seed: int = 0
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """As train_skipgram, but exposing both center and context arrays."""
    if not walks:
        raise ValueError("walks must be non-empty")
    node_ids = sorted({node for walk in walks for node in walk})
    index = {n: i for i, n in enumerate(node_ids)}
    dim = config.embedding_dim
    centers = np.stack([seeded_node_vector(n, dim, seed) for n in node_ids])
    contexts = np.zeros_like(centers)

    pairs = _skipgram_pairs(walks, config.window, index)
    if pairs.shape[0] == 0:
        return node_ids, centers, contexts

    counts = np.bincount(
        [index[n] for walk in walks for n in walk], minlength=len(node_ids)
    ).astype(np.float64)
    noise = counts**0.75
    noise /= noise.sum()

    rng = np.random.default_rng(np.random.SeedSequence([seed, len(node_ids)]))
    k = config.negatives_per_positive
    lr = config.learning_rate
    batch = 4096
    n = len(node_ids)
    for _ in range(config.epochs):
        for start in range(0, pairs.shape[0], batch):
            chunk = pairs[start : start + batch]
            c_idx, o_idx = chunk[:, 0], chunk[:, 1]
            n_idx = rng.choice(n, size=(chunk.shape[0], k), p=noise)
            u = centers[c_idx]  # [B, d]
            v = contexts[o_idx]  # [B, d]
            vn = contexts[n_idx]  # [B, k, d]
            pos_score = sigmoid((u * v).sum(axis=1))
            neg_score = sigmoid(np.einsum("bd,bkd->bk", u, vn))
            g_pos = pos_score - 1.0  # d/dz of -log sigma(z)
            du = g_pos[:, None] * v + np.einsum("bk,bkd->bd", neg_score, vn)
            dv = g_pos[:, None] * u
            dvn = neg_score[:, :, None] * u[:, None, :]
            # rows repeat inside a batch; average per-row so step sizes stay
            # bounded regardless of corpus concentration
            du_sum = np.zeros_like(centers)
            np.add.at(du_sum, c_idx, du)
            c_counts = np.bincount(c_idx, minlength=n)[:, None]
            centers -= lr * du_sum / np.maximum(c_counts, 1)
            dv_sum = np.zeros_like(contexts)
            np.add.at(dv_sum, o_idx, dv)
            np.add.at(dv_sum, n_idx.reshape(-1), dvn.reshape(-1, dim))
            v_counts = np.bincount(o_idx, minlength=n) + np.bincount(
                n_idx.reshape(-1), minlength=n
            )
            contexts -= lr * dv_sum / np.maximum(v_counts, 1)[:, None]
    return node_ids, centers, contexts


def skipgram_loss(
    walks: list[list[str]],
    centers: np.ndarray,
    contexts: np.ndarray,
    node_ids: list[str],
    config: WalkConfig,
    seed: int = 0,
) -> float:
    """Mean negative-sampling objective over the pair set (diagnostic)."""
    index = {n: i for i, n in enumerate(node_ids)}
    pairs = _skipgram_pairs(walks, config.window, index)
    if pairs.shape[0] == 0:
        return 0.0
    counts = np.bincount(
        [index[n] for walk in walks for n in walk], minlength=len(node_ids)
    ).astype(np.float64)
    noise = counts**0.75
    noise /= noise.sum()
    rng = np.random.default_rng(seed)
    n_idx = rng.choice(len(node_ids), size=(pairs.shape[0], config.negatives_per_positive), p=noise)
    u = centers[pairs[:, 0]]
    v = contexts[pairs[:, 1]]
    vn = contexts[n_idx]
    pos = np.logaddexp(0.0, -(u * v).sum(axis=1))
    neg = np.logaddexp(0.0, np.einsum("bd,bkd->bk", u, vn)).sum(axis=1)
    return float((pos + neg).mean())


def node_features(
    graph, config: WalkConfig, seed: int = 0
) -> dict[str, np.ndarray]:
    """Walks + skip-gram over one (sub-)graph; covers exactly its node set."""
    walks = generate_walks(graph, config, seed=seed)
    table = train_skipgram(walks, config, seed=seed)
    for node in graph.node_ids:
        if node not in table:
            table[node] = seeded_node_vector(node, config.embedding_dim, seed)
    return table
