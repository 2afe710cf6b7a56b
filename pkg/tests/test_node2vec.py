import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dilink.node2vec import (
    WalkConfig,
    generate_walks,
    node_features,
    seeded_node_vector,
    skipgram_loss,
    train_skipgram,
    train_skipgram_tables,
    transition_distribution,
)

from test_depgraph import graph_from_edges


def barbell_graph(clique=5):
    """Two cliques joined by a single bridge edge."""
    pairs = []
    left = [f"L{k}" for k in range(clique)]
    right = [f"R{k}" for k in range(clique)]
    for side in (left, right):
        for i in range(clique):
            for j in range(i + 1, clique):
                pairs.append((side[i], side[j]))
    pairs.append((left[0], right[0]))
    return graph_from_edges(pairs), left, right


class TestTransitionDistribution:
    def test_triangle_uniform(self):
        g = graph_from_edges([("A", "B"), ("B", "C"), ("C", "A")])
        dist = transition_distribution("A", "B", g, p=1.0, q=1.0)
        assert dist == {"A": pytest.approx(0.5), "C": pytest.approx(0.5)}

    def test_path_bias(self):
        g = graph_from_edges([("A", "B"), ("B", "C")])
        dist = transition_distribution("A", "B", g, p=1.0, q=4.0)
        assert dist["A"] == pytest.approx(0.8, abs=1e-12)
        assert dist["C"] == pytest.approx(0.2, abs=1e-12)

    def test_large_p_suppresses_backtrack(self):
        g = graph_from_edges([("A", "B"), ("B", "C")])
        dist = transition_distribution("A", "B", g, p=1e12, q=1.0)
        assert dist["A"] < 1e-11

    def test_isolated_current_errors(self):
        g = graph_from_edges([("A", "B")], nodes=["Z"])
        with pytest.raises(ValueError):
            transition_distribution(None, "Z", g, 1.0, 1.0)

    @given(st.floats(0.1, 10), st.floats(0.1, 10))
    @settings(max_examples=25)
    def test_sums_to_one_and_supported_on_neighbors(self, p, q):
        g = graph_from_edges([("A", "B"), ("B", "C"), ("C", "A"), ("C", "D")])
        dist = transition_distribution("C", "B", g, p, q)
        assert abs(sum(dist.values()) - 1.0) <= 1e-12
        assert set(dist) <= set(g.undirected_neighbors("B"))


class TestWalks:
    def test_isolated_node_walks(self):
        g = graph_from_edges([("A", "B")], nodes=["Z"])
        cfg = WalkConfig(walk_length=5, walks_per_node=3)
        walks = generate_walks(g, cfg, seed=0)
        z_walks = [w for w in walks if w[0] == "Z"]
        assert z_walks == [["Z"]] * 3

    def test_two_node_alternation(self):
        g = graph_from_edges([("A", "B")])
        cfg = WalkConfig(walk_length=6, walks_per_node=2)
        for walk in generate_walks(g, cfg, seed=1):
            expected = [walk[0], {"A": "B", "B": "A"}[walk[0]]] * 3
            assert walk == expected

    def test_walk_count_and_length_bounds(self):
        g = graph_from_edges([("A", "B"), ("B", "C"), ("C", "A")])
        cfg = WalkConfig(walk_length=7, walks_per_node=4)
        walks = generate_walks(g, cfg, seed=2)
        assert len(walks) == 3 * 4
        assert all(len(w) == 7 for w in walks)  # no dead ends on a triangle

    def test_deterministic_per_seed(self):
        g, _, _ = barbell_graph(4)
        cfg = WalkConfig(walk_length=10, walks_per_node=5)
        assert generate_walks(g, cfg, seed=3) == generate_walks(g, cfg, seed=3)


class TestSkipgram:
    def test_single_node_walks_keep_initialization(self):
        cfg = WalkConfig(walk_length=1, walks_per_node=2, embedding_dim=8)
        table = train_skipgram([["Z"], ["Z"]], cfg, seed=5)
        np.testing.assert_array_equal(table["Z"], seeded_node_vector("Z", 8, 5))

    def test_deterministic_tables(self):
        g, _, _ = barbell_graph(4)
        cfg = WalkConfig(walk_length=8, walks_per_node=6, embedding_dim=8, epochs=2)
        walks = generate_walks(g, cfg, seed=0)
        t1 = train_skipgram(walks, cfg, seed=0)
        t2 = train_skipgram(walks, cfg, seed=0)
        for node in t1:
            np.testing.assert_array_equal(t1[node], t2[node])

    def test_barbell_structural_separation(self):
        g, left, right = barbell_graph(5)
        cfg = WalkConfig(walk_length=10, walks_per_node=20, embedding_dim=16, epochs=5, window=5)
        table = node_features(g, cfg, seed=7)

        def cosine(a, b):
            return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

        intra, inter = [], []
        for side in (left, right):
            for i in range(len(side)):
                for j in range(i + 1, len(side)):
                    intra.append(cosine(table[side[i]], table[side[j]]))
        for a in left:
            for b in right:
                inter.append(cosine(table[a], table[b]))
        assert np.mean(intra) > np.mean(inter)

    def test_loss_decreases(self):
        g, _, _ = barbell_graph(4)
        cfg = WalkConfig(walk_length=8, walks_per_node=10, embedding_dim=8, epochs=5, window=4)
        walks = generate_walks(g, cfg, seed=1)
        node_ids, centers0, contexts0 = train_skipgram_tables(
            walks, WalkConfig(**{**cfg.__dict__, "epochs": 0})
        )
        node_ids, centers, contexts = train_skipgram_tables(walks, cfg, seed=1)
        initial = skipgram_loss(walks, centers0, contexts0, node_ids, cfg, seed=9)
        final = skipgram_loss(walks, centers, contexts, node_ids, cfg, seed=9)
        assert final < initial

    def test_feature_table_covers_node_set(self):
        g = graph_from_edges([("A", "B")], nodes=["Z"])
        cfg = WalkConfig(walk_length=4, walks_per_node=2, embedding_dim=4, epochs=1)
        table = node_features(g, cfg, seed=0)
        assert set(table) == {"A", "B", "Z"}
        assert all(np.all(np.isfinite(v)) for v in table.values())
