import numpy as np
import pytest

from attribeval.errors import ValidationError
from attribeval.louvain import louvain_communities, modularity
from oracles import best_partition_by_modularity


def block_graph():
    w = np.zeros((8, 8))
    for p, q in [(0, 4), (0, 5), (1, 4), (1, 5), (2, 6), (2, 7), (3, 6), (3, 7)]:
        w[p, q] = w[q, p] = 1.0
    return w


class TestLouvain:
    def test_two_block_graph_matches_brute_force(self):
        w = block_graph()
        communities = louvain_communities(w, seed=0)
        best, best_q = best_partition_by_modularity(w)
        assert sorted(communities) == best
        assert modularity(w, communities) == pytest.approx(best_q, abs=1e-12)

    def test_matches_brute_force_on_small_random_graphs(self):
        rng = np.random.default_rng(17)
        hits = 0
        for _ in range(6):
            n = 6
            w = np.zeros((n, n))
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.5:
                        w[i, j] = w[j, i] = float(rng.integers(1, 4))
            if w.sum() == 0:
                continue
            communities = louvain_communities(w, seed=0)
            _, best_q = best_partition_by_modularity(w)
            # greedy local search, so only near-optimality is guaranteed
            assert modularity(w, communities) >= best_q - 0.05
            hits += modularity(w, communities) == pytest.approx(best_q, abs=1e-12)
        assert hits >= 3  # usually exact on graphs this small

    def test_zero_weight_graph_gives_singletons(self):
        assert louvain_communities(np.zeros((4, 4))) == [[0], [1], [2], [3]]

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(3)
        w = np.abs(rng.normal(size=(10, 10)))
        w = (w + w.T) / 2
        np.fill_diagonal(w, 0.0)
        assert louvain_communities(w, seed=4) == louvain_communities(w, seed=4)

    def test_resolution_extremes(self):
        w = block_graph()
        fine = louvain_communities(w, resolution=50.0, seed=0)
        assert all(len(c) == 1 for c in fine)  # huge resolution shatters everything
        coarse = louvain_communities(w, resolution=0.01, seed=0)
        assert len(coarse) < 8

    def test_rejects_asymmetric_or_negative(self):
        with pytest.raises(ValidationError):
            louvain_communities(np.array([[0.0, 1.0], [0.5, 0.0]]))
        with pytest.raises(ValidationError):
            louvain_communities(np.array([[0.0, -1.0], [-1.0, 0.0]]))

    def test_modularity_of_trivial_partitions(self):
        w = block_graph()
        assert modularity(w, [list(range(8))]) == pytest.approx(0.0)
        singles = modularity(w, [[i] for i in range(8)])
        assert singles < 0
