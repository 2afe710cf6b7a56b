"""Service dependency graph: metadata + historical-link edges, N-hop sub-graphs, edge sampling.

Metadata edge files are UTF-8 TSV ``src<TAB>dst`` with ``#`` comments; the
graph export format is JSON ``{nodes: [{id, workload}], edges: [{src, dst, provenance}]}``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .incidents import Incident, IncidentLink, UnknownIncidentError


class Provenance(str, Enum):
    METADATA = "metadata"
    HISTORICAL_LINK = "historical_link"


class UnknownServiceError(KeyError):
    """A service id does not exist in the graph."""


@dataclass(frozen=True)
class ServiceGraph:
    """Directed dependency graph over services; immutable after build."""

    nodes: dict[str, str]  # service id -> workload ("" when unknown)
    edges: frozenset[tuple[str, str, Provenance]]
    _undirected: dict[str, tuple[str, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for src, dst, _ in self.edges:
            if src == dst:
                raise ValueError(f"self-loop on {src!r}")
            for endpoint in (src, dst):
                if endpoint not in self.nodes:
                    raise UnknownServiceError(endpoint)
        adj: dict[str, set[str]] = {node: set() for node in self.nodes}
        for src, dst, _ in self.edges:
            adj[src].add(dst)
            adj[dst].add(src)
        object.__setattr__(
            self, "_undirected", {node: tuple(sorted(nbrs)) for node, nbrs in adj.items()}
        )

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.nodes))

    def logical_edges(self) -> tuple[tuple[str, str], ...]:
        """Directed adjacencies with provenance collapsed, sorted."""
        return tuple(sorted({(src, dst) for src, dst, _ in self.edges}))

    def undirected_neighbors(self, node: str) -> tuple[str, ...]:
        if node not in self.nodes:
            raise UnknownServiceError(node)
        return self._undirected[node]


@dataclass(frozen=True)
class SubGraph:
    """Induced N-hop neighborhood (over both edge directions) around a center service."""

    center: str
    hops: int
    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]
    _undirected: dict[str, tuple[str, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.center not in self.nodes:
            raise ValueError("sub-graph must contain its center")
        adj: dict[str, set[str]] = {node: set() for node in self.nodes}
        for src, dst in self.edges:
            adj[src].add(dst)
            adj[dst].add(src)
        object.__setattr__(
            self, "_undirected", {node: tuple(sorted(nbrs)) for node, nbrs in adj.items()}
        )

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.nodes))

    def undirected_neighbors(self, node: str) -> tuple[str, ...]:
        return self._undirected[node]


def parse_metadata_edges(path: str | Path) -> list[tuple[str, str]]:
    """Read a TSV edge file, ignoring blank lines and ``#`` comments."""
    edges: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no}: expected 'src<TAB>dst', got {stripped!r}")
            edges.append((parts[0], parts[1]))
    return edges


def build_graph(
    metadata_edges: list[tuple[str, str]],
    historical_links: list[IncidentLink],
    incidents: dict[str, Incident],
) -> ServiceGraph:
    """Union metadata edges with link-derived edges (parent service -> child service).

    Duplicates collapse per provenance; links between incidents of one service
    add nothing (self-loop rule). Metadata-only services get workload "".
    """
    nodes: dict[str, str] = {}
    for inc in incidents.values():
        nodes.setdefault(inc.owning_service, inc.workload)
    edges: set[tuple[str, str, Provenance]] = set()
    for src, dst in metadata_edges:
        if src == dst:
            continue
        nodes.setdefault(src, "")
        nodes.setdefault(dst, "")
        edges.add((src, dst, Provenance.METADATA))
    for link in historical_links:
        for endpoint in (link.parent_id, link.child_id):
            if endpoint not in incidents:
                raise UnknownIncidentError(endpoint)
        src = incidents[link.parent_id].owning_service
        dst = incidents[link.child_id].owning_service
        if src == dst:
            continue
        edges.add((src, dst, Provenance.HISTORICAL_LINK))
    return ServiceGraph(nodes=nodes, edges=frozenset(edges))


def extract_subgraph(graph: ServiceGraph, center: str, hops: int) -> SubGraph:
    """Breadth-first neighborhood over the undirected view, with induced directed edges."""
    if center not in graph.nodes:
        raise UnknownServiceError(center)
    if hops < 0:
        raise ValueError("hops must be >= 0")
    reached = {center}
    frontier = deque([(center, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == hops:
            continue
        for nbr in graph.undirected_neighbors(node):
            if nbr not in reached:
                reached.add(nbr)
                frontier.append((nbr, depth + 1))
    induced = {
        (src, dst) for src, dst in graph.logical_edges() if src in reached and dst in reached
    }
    return SubGraph(center=center, hops=hops, nodes=frozenset(reached), edges=frozenset(induced))


def isolated_subgraph(center: str, hops: int = 0) -> SubGraph:
    """Single-node sub-graph used as the unknown-service fallback."""
    return SubGraph(center=center, hops=hops, nodes=frozenset({center}), edges=frozenset())


def sample_edges(graph: ServiceGraph, keep_fraction: float, seed: int = 0) -> ServiceGraph:
    """Keep exactly round(P * |logical edges|) logical edges via a seeded shuffle.

    Survivors retain all their provenance-tagged copies; the node set is unchanged.
    """
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in [0, 1]")
    logical = list(graph.logical_edges())
    keep_count = round(keep_fraction * len(logical))
    order = np.random.default_rng(seed).permutation(len(logical))
    kept = {logical[i] for i in order[:keep_count]}
    edges = frozenset(e for e in graph.edges if (e[0], e[1]) in kept)
    return ServiceGraph(nodes=dict(graph.nodes), edges=edges)


def export_graph(graph: ServiceGraph, path: str | Path) -> None:
    payload = {
        "nodes": [{"id": n, "workload": graph.nodes[n]} for n in graph.node_ids],
        "edges": [
            {"src": src, "dst": dst, "provenance": prov.value}
            for src, dst, prov in sorted(graph.edges)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def import_graph(path: str | Path) -> ServiceGraph:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    nodes = {n["id"]: n["workload"] for n in payload["nodes"]}
    edges = frozenset(
        (e["src"], e["dst"], Provenance(e["provenance"])) for e in payload["edges"]
    )
    return ServiceGraph(nodes=nodes, edges=edges)
