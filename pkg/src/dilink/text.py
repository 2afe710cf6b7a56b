"""Text and categorical feature towers producing an incident's textual embedding.

Two sequence towers (title, topology) feed tf-idf-scaled token embeddings in
token order through a stacked LSTM; three categorical towers (monitor id,
failure type, owning team) pass a sparse tf-idf vector through a dense layer.
Tower outputs are concatenated and linearly projected to the text output dim.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .incidents import Incident
from .nn import Dropout, Linear, LSTM, ReLU, ShapeError, glorot

TOKEN_PATTERN = re.compile(r"[a-z0-9]+")

FEATURE_DIM_GRID = (25, 50)
TEXT_OUTPUT_DIM_GRID = (50, 100, 200)


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs."""
    return TOKEN_PATTERN.findall(text.lower())


@dataclass(frozen=True)
class TextTowerConfig:
    title_dim: int = 25
    topology_dim: int = 25
    monitor_dim: int = 25
    failure_dim: int = 25
    team_dim: int = 25
    output_dim: int = 100
    lstm_layers: int = 2
    lstm_hidden: int = 16
    dropout: float = 0.3
    max_sequence_len: int = 48

    def __post_init__(self) -> None:
        dims = (
            self.title_dim,
            self.topology_dim,
            self.monitor_dim,
            self.failure_dim,
            self.team_dim,
            self.output_dim,
            self.lstm_hidden,
            self.max_sequence_len,
        )
        if any(d <= 0 for d in dims):
            raise ValueError("all dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.lstm_layers < 1:
            raise ValueError("lstm_layers must be >= 1")


class Vocabulary:
    """Token index plus smoothed idf: ln((1 + N) / (1 + df)) + 1.

    Indices are dense and lexicographic; unseen tokens map to the OOV index
    |V| and carry the maximum idf.
    """

    def __init__(self, tokens: dict[str, int], idf: np.ndarray, document_count: int):
        self.tokens = tokens
        self.idf = np.asarray(idf, dtype=np.float64)
        self.document_count = document_count

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def oov_index(self) -> int:
        return len(self.tokens)

    @property
    def oov_idf(self) -> float:
        return float(self.idf.max()) if self.idf.size else 1.0

    def to_dict(self) -> dict:
        return {
            "tokens": sorted(self.tokens, key=self.tokens.__getitem__),
            "idf": self.idf.tolist(),
            "document_count": self.document_count,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocabulary":
        tokens = {tok: i for i, tok in enumerate(payload["tokens"])}
        return cls(tokens, np.asarray(payload["idf"]), payload["document_count"])

    def term_weights(self, text: str) -> dict[int, float]:
        """tf * idf per index over |V|+1 slots, OOV counts pooled into the OOV slot."""
        counts: dict[int, int] = {}
        for token in tokenize(text):
            idx = self.tokens.get(token, self.oov_index)
            counts[idx] = counts.get(idx, 0) + 1
        return {
            idx: c * (self.idf[idx] if idx < self.size else self.oov_idf)
            for idx, c in counts.items()
        }

    def sequence_encoding(self, text: str, max_len: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-token (index, tf*idf weight) truncated to the first max_len tokens, zero-padded."""
        tokens = tokenize(text)[:max_len]
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        idx = np.full(max_len, self.oov_index, dtype=np.int64)
        weights = np.zeros(max_len)
        for t, token in enumerate(tokens):
            token_idx = self.tokens.get(token, self.oov_index)
            idf = self.idf[token_idx] if token_idx < self.size else self.oov_idf
            idx[t] = token_idx
            weights[t] = counts[token] * idf
        return idx, weights


def fit_vocabulary(corpus: list[str]) -> Vocabulary:
    """Document frequency with set semantics; deterministic lexicographic indices."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    df: dict[str, int] = {}
    for doc in corpus:
        for token in set(tokenize(doc)):
            df[token] = df.get(token, 0) + 1
    tokens = {token: i for i, token in enumerate(sorted(df))}
    n = len(corpus)
    idf = np.array(
        [math.log((1 + n) / (1 + df[token])) + 1.0 for token in sorted(df)], dtype=np.float64
    )
    return Vocabulary(tokens, idf, n)


class SequenceTower:
    """tf-idf-scaled token embeddings -> stacked LSTM -> dropout -> linear to tower_dim."""

    def __init__(
        self,
        vocabulary: Vocabulary,
        embedding_dim: int,
        tower_dim: int,
        config: TextTowerConfig,
        rng: np.random.Generator,
    ):
        self.vocabulary = vocabulary
        self.embedding_dim = embedding_dim
        self.tower_dim = tower_dim
        self.max_len = config.max_sequence_len
        rows = vocabulary.size + 1
        self.embedding = glorot(rng, rows, embedding_dim, (rows, embedding_dim))
        self.embedding_grad = np.zeros_like(self.embedding)
        self.lstms = [
            LSTM(embedding_dim if i == 0 else config.lstm_hidden, config.lstm_hidden, rng)
            for i in range(config.lstm_layers)
        ]
        self.dropout = Dropout(config.dropout)
        self.proj = Linear(config.lstm_hidden, tower_dim, rng)

    def encode(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        return self.vocabulary.sequence_encoding(text, self.max_len)

    def encode_sequence(
        self, text: str, mode: str = "eval", rng: np.random.Generator | None = None
    ) -> np.ndarray:
        """Single text through embedding, LSTM stack and dropout: an lstm_hidden-dim vector."""
        idx, weights = self.encode(text)
        x = weights[:, None] * self.embedding[idx]
        h = x[None, :, :]
        for lstm in self.lstms:
            h, _ = lstm.apply_sequence(h)
        out, _ = self.dropout.apply(h[:, -1], mode=mode, rng=rng)
        return out[0]

    def forward(
        self,
        idx: np.ndarray,
        weights: np.ndarray,
        mode: str = "eval",
        rng: np.random.Generator | None = None,
    ):
        x = weights[:, :, None] * self.embedding[idx]
        h = x
        lstm_caches = []
        for lstm in self.lstms:
            h, cache = lstm.apply_sequence(h)
            lstm_caches.append(cache)
        last = h[:, -1]
        dropped, drop_cache = self.dropout.apply(last, mode=mode, rng=rng)
        out, proj_cache = self.proj.apply(dropped)
        return out, (idx, weights, lstm_caches, h.shape, drop_cache, proj_cache)

    def backward(self, cache, upstream: np.ndarray) -> None:
        idx, weights, lstm_caches, h_shape, drop_cache, proj_cache = cache
        d_drop = self.proj.backprop(proj_cache, upstream)
        d_last = self.dropout.backprop(drop_cache, d_drop)
        d_h = np.zeros(h_shape)
        d_h[:, -1] = d_last
        for lstm, lstm_cache in zip(reversed(self.lstms), reversed(lstm_caches)):
            d_h = lstm.backprop(lstm_cache, d_h)
        d_x = d_h  # [B, T, emb]
        contrib = weights[:, :, None] * d_x
        np.add.at(self.embedding_grad, idx.reshape(-1), contrib.reshape(-1, self.embedding_dim))

    def named_params(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.embedding": self.embedding}
        for i, lstm in enumerate(self.lstms):
            for name, p in lstm.params.items():
                out[f"{prefix}.lstm{i}.{name}"] = p
        for name, p in self.proj.params.items():
            out[f"{prefix}.proj.{name}"] = p
        return out

    def named_grads(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.embedding": self.embedding_grad}
        for i, lstm in enumerate(self.lstms):
            for name, g in lstm.grads.items():
                out[f"{prefix}.lstm{i}.{name}"] = g
        for name, g in self.proj.grads.items():
            out[f"{prefix}.proj.{name}"] = g
        return out

    def zero_grad(self) -> None:
        self.embedding_grad[...] = 0.0
        for lstm in self.lstms:
            lstm.zero_grad()
        self.proj.zero_grad()


class CategoricalTower:
    """Sparse tf-idf vector over |V|+1 -> linear -> ReLU."""

    def __init__(self, vocabulary: Vocabulary, tower_dim: int, rng: np.random.Generator):
        self.vocabulary = vocabulary
        self.tower_dim = tower_dim
        self.dense = Linear(vocabulary.size + 1, tower_dim, rng)
        self.relu = ReLU()

    def encode(self, value: str) -> dict[int, float]:
        return self.vocabulary.term_weights(value)

    def encode_value(self, value: str) -> np.ndarray:
        """Single value through the dense layer and ReLU."""
        out, _ = self.forward([self.encode(value)])
        return out[0]

    def dense_input(self, encoded: list[dict[int, float]]) -> np.ndarray:
        x = np.zeros((len(encoded), self.vocabulary.size + 1))
        for row, weights in enumerate(encoded):
            for idx, w in weights.items():
                x[row, idx] = w
        return x

    def forward(self, encoded: list[dict[int, float]], mode: str = "eval", rng=None):
        x = self.dense_input(encoded)
        pre, dense_cache = self.dense.apply(x)
        out, relu_cache = self.relu.apply(pre)
        return out, (dense_cache, relu_cache)

    def backward(self, cache, upstream: np.ndarray) -> None:
        dense_cache, relu_cache = cache
        d_pre = self.relu.backprop(relu_cache, upstream)
        self.dense.backprop(dense_cache, d_pre)

    def named_params(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.dense.{name}": p for name, p in self.dense.params.items()}

    def named_grads(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.dense.{name}": g for name, g in self.dense.grads.items()}

    def zero_grad(self) -> None:
        self.dense.zero_grad()


@dataclass
class EncodedText:
    """Pre-tokenized per-incident tower inputs, cached across epochs."""

    title_idx: np.ndarray
    title_w: np.ndarray
    topology_idx: np.ndarray
    topology_w: np.ndarray
    monitor: dict[int, float]
    failure: dict[int, float]
    team: dict[int, float]


class TextModule:
    """Five towers concatenated and projected to the text output dimension."""

    def __init__(
        self,
        config: TextTowerConfig,
        vocabularies: dict[str, Vocabulary],
        rng: np.random.Generator,
    ):
        self.config = config
        self.title = SequenceTower(
            vocabularies["title"], config.title_dim, config.title_dim, config, rng
        )
        self.topology = SequenceTower(
            vocabularies["topology"], config.topology_dim, config.topology_dim, config, rng
        )
        self.monitor = CategoricalTower(vocabularies["monitor"], config.monitor_dim, rng)
        self.failure = CategoricalTower(vocabularies["failure"], config.failure_dim, rng)
        self.team = CategoricalTower(vocabularies["team"], config.team_dim, rng)
        concat_dim = (
            config.title_dim
            + config.topology_dim
            + config.monitor_dim
            + config.failure_dim
            + config.team_dim
        )
        self.concat_dim = concat_dim
        self.output = Linear(concat_dim, config.output_dim, rng)

    @property
    def vocabularies(self) -> dict[str, Vocabulary]:
        return {
            "title": self.title.vocabulary,
            "topology": self.topology.vocabulary,
            "monitor": self.monitor.vocabulary,
            "failure": self.failure.vocabulary,
            "team": self.team.vocabulary,
        }

    def encode_incident(self, incident: Incident) -> EncodedText:
        title_idx, title_w = self.title.encode(incident.title)
        topology_idx, topology_w = self.topology.encode(incident.topology)
        return EncodedText(
            title_idx=title_idx,
            title_w=title_w,
            topology_idx=topology_idx,
            topology_w=topology_w,
            monitor=self.monitor.encode(incident.monitor_id),
            failure=self.failure.encode(incident.failure_type),
            team=self.team.encode(incident.owning_service),
        )

    def forward(self, batch: list[EncodedText], mode: str = "eval", rng=None):
        title_out, title_cache = self.title.forward(
            np.stack([e.title_idx for e in batch]),
            np.stack([e.title_w for e in batch]),
            mode=mode,
            rng=rng,
        )
        topo_out, topo_cache = self.topology.forward(
            np.stack([e.topology_idx for e in batch]),
            np.stack([e.topology_w for e in batch]),
            mode=mode,
            rng=rng,
        )
        mon_out, mon_cache = self.monitor.forward([e.monitor for e in batch])
        fail_out, fail_cache = self.failure.forward([e.failure for e in batch])
        team_out, team_cache = self.team.forward([e.team for e in batch])
        concat = np.concatenate([title_out, topo_out, mon_out, fail_out, team_out], axis=1)
        if concat.shape[1] != self.concat_dim:
            raise ShapeError(f"expected concat dim {self.concat_dim}, got {concat.shape[1]}")
        out, out_cache = self.output.apply(concat)
        return out, (title_cache, topo_cache, mon_cache, fail_cache, team_cache, out_cache)

    def backward(self, cache, upstream: np.ndarray) -> None:
        title_cache, topo_cache, mon_cache, fail_cache, team_cache, out_cache = cache
        d_concat = self.output.backprop(out_cache, upstream)
        c = self.config
        splits = np.cumsum([c.title_dim, c.topology_dim, c.monitor_dim, c.failure_dim])
        d_title, d_topo, d_mon, d_fail, d_team = np.hsplit(d_concat, splits)
        self.title.backward(title_cache, d_title)
        self.topology.backward(topo_cache, d_topo)
        self.monitor.backward(mon_cache, d_mon)
        self.failure.backward(fail_cache, d_fail)
        self.team.backward(team_cache, d_team)

    def embed_incident(self, incident: Incident, mode: str = "eval", rng=None) -> np.ndarray:
        out, _ = self.forward([self.encode_incident(incident)], mode=mode, rng=rng)
        return out[0]

    def named_params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        out.update(self.title.named_params("text.title"))
        out.update(self.topology.named_params("text.topology"))
        out.update(self.monitor.named_params("text.monitor"))
        out.update(self.failure.named_params("text.failure"))
        out.update(self.team.named_params("text.team"))
        for name, p in self.output.params.items():
            out[f"text.output.{name}"] = p
        return out

    def named_grads(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        out.update(self.title.named_grads("text.title"))
        out.update(self.topology.named_grads("text.topology"))
        out.update(self.monitor.named_grads("text.monitor"))
        out.update(self.failure.named_grads("text.failure"))
        out.update(self.team.named_grads("text.team"))
        for name, g in self.output.grads.items():
            out[f"text.output.{name}"] = g
        return out

    def zero_grad(self) -> None:
        for tower in (self.title, self.topology, self.monitor, self.failure, self.team):
            tower.zero_grad()
        self.output.zero_grad()


def fit_text_module(
    incidents: list[Incident], config: TextTowerConfig, rng: np.random.Generator
) -> TextModule:
    """Fit the five vocabularies on an incident corpus and initialize towers."""
    if not incidents:
        raise ValueError("cannot fit a text module on an empty incident list")
    vocabularies = {
        "title": fit_vocabulary([inc.title for inc in incidents]),
        "topology": fit_vocabulary([inc.topology for inc in incidents]),
        "monitor": fit_vocabulary([inc.monitor_id for inc in incidents]),
        "failure": fit_vocabulary([inc.failure_type for inc in incidents]),
        "team": fit_vocabulary([inc.owning_service for inc in incidents]),
    }
    return TextModule(config, vocabularies, rng)
