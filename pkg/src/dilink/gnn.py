"""Graph encoders (GCN, GAT, GraphSAGE) over node features of a service sub-graph.

Aggregation runs over the undirected view with self-loops; the encoder readout
is the center (owning-service) node's final row unless mean pooling is chosen.
Sub-graphs are small, so adjacency is dense and attention uses edge arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .depgraph import SubGraph
from .nn import Linear, ShapeError, glorot

GRAPH_DIM_GRID = (16, 32, 48, 64)

KINDS = ("gcn", "gat", "sage")


@dataclass(frozen=True)
class GraphEncoderConfig:
    kind: str = "gcn"
    input_dim: int = 32
    hidden_dim: int = 32
    output_dim: int = 32
    layers: int = 2
    attention_heads: int = 2
    leaky_relu_slope: float = 0.2
    readout: str = "center"  # or "mean"
    sage_normalize: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if min(self.input_dim, self.hidden_dim, self.output_dim) <= 0:
            raise ValueError("dimensions must be positive")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.attention_heads < 1:
            raise ValueError("attention_heads must be >= 1")
        if self.readout not in ("center", "mean"):
            raise ValueError("readout must be center or mean")


class GraphStructure:
    """Precomputed dense/edge-array views of one sub-graph, node order sorted."""

    def __init__(self, subgraph: SubGraph):
        self.node_ids = list(subgraph.node_ids)
        index = {n: i for i, n in enumerate(self.node_ids)}
        self.center_index = index[subgraph.center]
        n = len(self.node_ids)
        adj = np.zeros((n, n), dtype=bool)
        for src, dst in subgraph.edges:
            adj[index[src], index[dst]] = True
            adj[index[dst], index[src]] = True
        np.fill_diagonal(adj, False)
        self.adjacency = adj

        a_tilde = adj.astype(np.float64) + np.eye(n)
        inv_sqrt_deg = 1.0 / np.sqrt(a_tilde.sum(axis=1))
        self.gcn_norm = a_tilde * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]

        degree = adj.sum(axis=1)
        self.sage_mean = adj.astype(np.float64) / np.maximum(degree, 1)[:, None]

        ctr, nbr = np.nonzero(adj + np.eye(n, dtype=bool))
        order = np.lexsort((nbr, ctr))
        self.edge_ctr = ctr[order]
        self.edge_nbr = nbr[order]

    @property
    def size(self) -> int:
        return len(self.node_ids)


class GCNLayer:
    """H' = ReLU(D^-1/2 (A + I) D^-1/2 H W)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.d_in, self.d_out = d_in, d_out
        self.params = {"W": glorot(rng, d_in, d_out, (d_in, d_out))}
        self.grads = {"W": np.zeros_like(self.params["W"])}

    def forward(self, structure: GraphStructure, h: np.ndarray):
        if h.shape != (structure.size, self.d_in):
            raise ShapeError(f"expected [{structure.size}, {self.d_in}], got {list(h.shape)}")
        mixed = structure.gcn_norm @ h
        pre = mixed @ self.params["W"]
        return np.maximum(pre, 0.0), (structure, mixed, pre)

    def backward(self, cache, upstream: np.ndarray) -> np.ndarray:
        structure, mixed, pre = cache
        d_pre = upstream * (pre > 0)
        self.grads["W"] += mixed.T @ d_pre
        return structure.gcn_norm.T @ (d_pre @ self.params["W"].T)


class SAGELayer:
    """H' = ReLU(H W_self + mean_neighbors(H) W_neigh); empty neighborhoods mean zero."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, normalize: bool = False):
        self.d_in, self.d_out = d_in, d_out
        self.normalize = normalize
        self.params = {
            "W_self": glorot(rng, d_in, d_out, (d_in, d_out)),
            "W_neigh": glorot(rng, d_in, d_out, (d_in, d_out)),
        }
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def forward(self, structure: GraphStructure, h: np.ndarray):
        if h.shape != (structure.size, self.d_in):
            raise ShapeError(f"expected [{structure.size}, {self.d_in}], got {list(h.shape)}")
        mean_h = structure.sage_mean @ h
        pre = h @ self.params["W_self"] + mean_h @ self.params["W_neigh"]
        relu = np.maximum(pre, 0.0)
        if not self.normalize:
            return relu, (structure, h, mean_h, pre, None)
        norms = np.linalg.norm(relu, axis=1, keepdims=True)
        safe = np.maximum(norms, 1e-12)
        return relu / safe, (structure, h, mean_h, pre, (relu, safe))

    def backward(self, cache, upstream: np.ndarray) -> np.ndarray:
        structure, h, mean_h, pre, norm_cache = cache
        if norm_cache is not None:
            relu, safe = norm_cache
            upstream = upstream / safe - relu * (relu * upstream).sum(
                axis=1, keepdims=True
            ) / safe**3
        d_pre = upstream * (pre > 0)
        self.grads["W_self"] += h.T @ d_pre
        self.grads["W_neigh"] += mean_h.T @ d_pre
        d_h = d_pre @ self.params["W_self"].T
        d_h += structure.sage_mean.T @ (d_pre @ self.params["W_neigh"].T)
        return d_h


class GATLayer:
    """Masked self-attention over neighborhoods; heads concatenate (hidden) or average (final)."""

    def __init__(
        self,
        d_in: int,
        d_out_total: int,
        heads: int,
        slope: float,
        final: bool,
        rng: np.random.Generator,
    ):
        self.d_in = d_in
        self.heads = heads
        self.slope = slope
        self.final = final
        if final:
            self.d_head = d_out_total
        else:
            if d_out_total % heads:
                raise ValueError("hidden dim must be divisible by attention_heads")
            self.d_head = d_out_total // heads
        self.d_out = d_out_total
        self.params = {}
        for h in range(heads):
            self.params[f"W{h}"] = glorot(rng, d_in, self.d_head, (d_in, self.d_head))
            self.params[f"a_self{h}"] = glorot(rng, 2 * self.d_head, 1, (self.d_head,))
            self.params[f"a_neigh{h}"] = glorot(rng, 2 * self.d_head, 1, (self.d_head,))
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def _head_forward(self, structure: GraphStructure, h: np.ndarray, head: int):
        n = structure.size
        ctr, nbr = structure.edge_ctr, structure.edge_nbr
        z = h @ self.params[f"W{head}"]
        pre = z[ctr] @ self.params[f"a_self{head}"] + z[nbr] @ self.params[f"a_neigh{head}"]
        logits = np.where(pre > 0, pre, self.slope * pre)
        seg_max = np.full(n, -np.inf)
        np.maximum.at(seg_max, ctr, logits)
        exp = np.exp(logits - seg_max[ctr])
        seg_sum = np.zeros(n)
        np.add.at(seg_sum, ctr, exp)
        alpha = exp / seg_sum[ctr]
        m = np.zeros((n, self.d_head))
        np.add.at(m, ctr, alpha[:, None] * z[nbr])
        out = np.maximum(m, 0.0)
        return out, (z, pre, alpha, m)

    def _head_backward(self, structure, h, head, cache, upstream):
        ctr, nbr = structure.edge_ctr, structure.edge_nbr
        z, pre, alpha, m = cache
        n = structure.size
        dm = upstream * (m > 0)
        d_alpha = (dm[ctr] * z[nbr]).sum(axis=1)
        dz = np.zeros_like(z)
        np.add.at(dz, nbr, alpha[:, None] * dm[ctr])
        seg_dot = np.zeros(n)
        np.add.at(seg_dot, ctr, alpha * d_alpha)
        d_logits = alpha * (d_alpha - seg_dot[ctr])
        d_pre = d_logits * np.where(pre > 0, 1.0, self.slope)
        self.grads[f"a_self{head}"] += d_pre @ z[ctr]
        self.grads[f"a_neigh{head}"] += d_pre @ z[nbr]
        np.add.at(dz, ctr, d_pre[:, None] * self.params[f"a_self{head}"])
        np.add.at(dz, nbr, d_pre[:, None] * self.params[f"a_neigh{head}"])
        self.grads[f"W{head}"] += h.T @ dz
        return dz @ self.params[f"W{head}"].T

    def forward(self, structure: GraphStructure, h: np.ndarray):
        if h.shape != (structure.size, self.d_in):
            raise ShapeError(f"expected [{structure.size}, {self.d_in}], got {list(h.shape)}")
        outs, caches = [], []
        for head in range(self.heads):
            out, cache = self._head_forward(structure, h, head)
            outs.append(out)
            caches.append(cache)
        if self.final:
            combined = np.mean(outs, axis=0)
        else:
            combined = np.concatenate(outs, axis=1)
        return combined, (structure, h, caches)

    def backward(self, cache, upstream: np.ndarray) -> np.ndarray:
        structure, h, caches = cache
        d_h = np.zeros_like(h)
        for head in range(self.heads):
            if self.final:
                d_head = upstream / self.heads
            else:
                d_head = upstream[:, head * self.d_head : (head + 1) * self.d_head]
            d_h += self._head_backward(structure, h, head, caches[head], d_head)
        return d_h

    def attention_weights(self, structure: GraphStructure, h: np.ndarray, head: int = 0):
        """Edge attention coefficients (diagnostic; rows sum to 1 per center node)."""
        _, (_, _, alpha, _) = self._head_forward(structure, h, head)
        return structure.edge_ctr, structure.edge_nbr, alpha


class GraphEncoder:
    """Stacked encoder layers; readout of the center row gives the incident's graph embedding."""

    def __init__(self, config: GraphEncoderConfig, rng: np.random.Generator):
        self.config = config
        dims = (
            [config.input_dim]
            + [config.hidden_dim] * (config.layers - 1)
            + [config.output_dim]
        )
        self.layers = []
        for i in range(config.layers):
            final = i == config.layers - 1
            if config.kind == "gcn":
                layer = GCNLayer(dims[i], dims[i + 1], rng)
            elif config.kind == "sage":
                layer = SAGELayer(dims[i], dims[i + 1], rng, normalize=config.sage_normalize)
            else:
                layer = GATLayer(
                    dims[i], dims[i + 1], config.attention_heads, config.leaky_relu_slope, final, rng
                )
            self.layers.append(layer)

    def feature_matrix(self, structure: GraphStructure, features: dict[str, np.ndarray]):
        rows = []
        for node in structure.node_ids:
            if node not in features:
                raise KeyError(f"missing feature row for node {node!r}")
            rows.append(features[node])
        h = np.asarray(rows, dtype=np.float64)
        if h.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"expected feature dim {self.config.input_dim}, got {h.shape[1]}"
            )
        return h

    def forward(self, structure: GraphStructure, features: dict[str, np.ndarray]):
        h = self.feature_matrix(structure, features)
        caches = []
        for layer in self.layers:
            h, cache = layer.forward(structure, h)
            caches.append(cache)
        if self.config.readout == "center":
            out = h[structure.center_index]
        else:
            out = h.mean(axis=0)
        return out, (structure, h.shape, caches)

    def backward(self, cache, upstream: np.ndarray) -> None:
        structure, h_shape, caches = cache
        d_h = np.zeros(h_shape)
        if self.config.readout == "center":
            d_h[structure.center_index] = upstream
        else:
            d_h[:] = upstream / h_shape[0]
        for layer, layer_cache in zip(reversed(self.layers), reversed(caches)):
            d_h = layer.backward(layer_cache, d_h)

    def encode(self, structure: GraphStructure, features: dict[str, np.ndarray]) -> np.ndarray:
        out, _ = self.forward(structure, features)
        return out

    def named_params(self, prefix: str = "graph") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                out[f"{prefix}.layer{i}.{name}"] = p
        return out

    def named_grads(self, prefix: str = "graph") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, g in layer.grads.items():
                out[f"{prefix}.layer{i}.{name}"] = g
        return out

    def zero_grad(self) -> None:
        for layer in self.layers:
            for g in layer.grads.values():
                g[...] = 0.0


def encode_subgraph(
    subgraph: SubGraph,
    features: dict[str, np.ndarray],
    config: GraphEncoderConfig,
    rng: np.random.Generator | None = None,
    encoder: GraphEncoder | None = None,
) -> np.ndarray:
    """One-shot readout of a sub-graph; builds a fresh encoder unless one is supplied."""
    if encoder is None:
        encoder = GraphEncoder(config, rng or np.random.default_rng(0))
    return encoder.encode(GraphStructure(subgraph), features)
