from itertools import combinations

import numpy as np
import networkx as nx
import pytest
from sklearn.metrics import adjusted_rand_score

from graphs import from_edges, from_networkx, gen_planar, gen_sbm, gen_toy
from metrics import (NUM_ORBITS, STATISTICS, clustering_hist, degree_hist, evaluate, fit_blocks, is_planar,
                     jacobi_eigenvalues, laplacian_spectrum_hist, mmd_tv, mmd_tv_hists, normalized_laplacian,
                     orbit_counts, orbit_hist, planar_valid, sbm_valid, toy_valid, vun)
from models import LabeledGraph

# 连通 4 点子图模板：(模板, {子图内度数: 轨道下标})
TEMPLATES = [
    (nx.path_graph(4), {1: 0, 2: 1}),
    (nx.star_graph(3), {1: 2, 3: 3}),
    (nx.cycle_graph(4), {2: 4}),
    (nx.Graph([(0, 1), (1, 2), (0, 2), (2, 3)]), {1: 5, 2: 6, 3: 7}),
    (nx.Graph([(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)]), {2: 8, 3: 9}),
    (nx.complete_graph(4), {3: 10}),
]


def reference_orbits(G):
    nxg = G.to_networkx()
    counts = np.zeros((G.n, NUM_ORBITS), dtype=np.int64)
    for quad in combinations(range(G.n), 4):
        sub = nxg.subgraph(quad)
        if not nx.is_connected(sub):
            continue
        for template, orbits in TEMPLATES:
            if nx.is_isomorphic(sub, template):
                for v in quad:
                    counts[v, orbits[sub.degree(v)]] += 1
                break
    return counts


class TestHistograms:

    def test_degree_triangle(self):
        np.testing.assert_allclose(degree_hist(from_networkx(nx.complete_graph(3))), [0, 0, 1])

    def test_degree_star(self):
        np.testing.assert_allclose(degree_hist(from_networkx(nx.star_graph(4))), [0, 0.8, 0, 0, 0.2])

    def test_clustering(self):
        tree = clustering_hist(from_networkx(nx.path_graph(5)))
        assert tree[0] == 1.0 and tree.sum() == 1.0
        k4 = clustering_hist(from_networkx(nx.complete_graph(4)))
        assert k4[-1] == 1.0
        cycle = clustering_hist(from_networkx(nx.cycle_graph(5)))
        assert cycle[0] == 1.0

    def test_weighted_edges_count_once(self):
        g = from_edges(3, [(0, 1, 3), (1, 2, 2)])
        np.testing.assert_allclose(degree_hist(g), [0, 2 / 3, 1 / 3])


class TestOrbits:

    def test_path(self):
        counts = orbit_counts(from_networkx(nx.path_graph(4)), per_node=True)
        np.testing.assert_array_equal(counts[[0, 3], 0], [1, 1])
        np.testing.assert_array_equal(counts[[1, 2], 1], [1, 1])
        assert counts.sum() == 4

    def test_complete(self):
        counts = orbit_counts(from_networkx(nx.complete_graph(4)), per_node=True)
        np.testing.assert_array_equal(counts[:, 10], np.ones(4))
        assert counts.sum() == 4

    def test_small_graphs_have_no_orbits(self):
        np.testing.assert_array_equal(orbit_counts(from_networkx(nx.complete_graph(3))), np.zeros(NUM_ORBITS))
        assert orbit_hist(from_networkx(nx.empty_graph(5))).sum() == 0

    def test_matches_subgraph_classifier(self, rng):
        for _ in range(20):
            G = from_networkx(nx.gnp_random_graph(8, 0.45, seed=int(rng.integers(2 ** 31))))
            np.testing.assert_array_equal(orbit_counts(G, per_node=True), reference_orbits(G))

    def test_hist_normalized(self):
        h = orbit_hist(gen_toy("cycles", 6, 1).graphs[0])
        assert h.sum() == pytest.approx(1.0)


class TestSpectrum:

    def test_jacobi_matches_lapack(self, rng):
        for n in (1, 2, 5, 9):
            M = rng.standard_normal((n, n))
            M = M + M.T
            np.testing.assert_allclose(jacobi_eigenvalues(M), np.linalg.eigvalsh(M), atol=1e-8)

    def test_jacobi_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            jacobi_eigenvalues(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_single_edge(self):
        np.testing.assert_allclose(jacobi_eigenvalues(normalized_laplacian(from_networkx(nx.path_graph(2)))),
                                   [0.0, 2.0], atol=1e-12)

    def test_trace_counts_non_isolated_nodes(self):
        g = from_edges(6, [(0, 1), (1, 2), (3, 4)])
        L = normalized_laplacian(g)
        assert L[5, 5] == 0.0
        assert jacobi_eigenvalues(L).sum() == pytest.approx(5.0)

    def test_permutation_invariant(self, rng):
        g = gen_planar(rng, 10)
        np.testing.assert_allclose(jacobi_eigenvalues(normalized_laplacian(g)),
                                   jacobi_eigenvalues(normalized_laplacian(g.permute(rng.permutation(10)))),
                                   atol=1e-9)

    def test_jacobi_converges_on_laplacian(self, caplog):
        L = normalized_laplacian(from_networkx(nx.gnp_random_graph(9, 0.4, seed=3)))
        with caplog.at_level("WARNING", logger="metrics"):
            eigs = jacobi_eigenvalues(L)
        assert "未收敛" not in caplog.text
        np.testing.assert_allclose(eigs, np.linalg.eigvalsh(L), atol=1e-9)

    @pytest.mark.parametrize("G", [nx.gnp_random_graph(9, 0.4, seed=3), nx.cycle_graph(8), nx.path_graph(7)])
    def test_statistics_exactly_invariant_under_relabeling(self, G, rng):
        g = from_networkx(G)
        for name, fn in STATISTICS.items():
            expected = fn(g)
            for _ in range(20):
                np.testing.assert_array_equal(fn(g.permute(rng.permutation(g.n))), expected, err_msg=name)

    def test_hist_range(self):
        h = laplacian_spectrum_hist(from_networkx(nx.complete_graph(5)))
        assert h.sum() == pytest.approx(1.0)
        assert h[0] == pytest.approx(0.2)


class TestMMD:

    def test_identical_sets(self):
        graphs = list(gen_toy("mixed", 6, 3).graphs)
        for statistic in ("degree", "clustering", "orbit", "spectral"):
            assert mmd_tv(graphs, graphs, statistic) == pytest.approx(0.0, abs=1e-12)

    def test_symmetric(self, rng):
        a = [rng.dirichlet(np.ones(5)) for _ in range(4)]
        b = [rng.dirichlet(np.ones(7)) for _ in range(3)]
        assert mmd_tv_hists(a, b) == pytest.approx(mmd_tv_hists(b, a), abs=1e-14)

    def test_double_loop_reference(self, rng):
        a = [rng.dirichlet(np.ones(4)) for _ in range(3)]
        b = [rng.dirichlet(np.ones(6)) for _ in range(5)]

        def k(p, q):
            length = max(len(p), len(q))
            p = np.pad(p, (0, length - len(p)))
            q = np.pad(q, (0, length - len(q)))
            return np.exp(-(0.5 * np.abs(p - q).sum()) ** 2 / 2.0)

        expected = (np.mean([k(p, q) for p in a for q in a]) + np.mean([k(p, q) for p in b for q in b])
                    - 2 * np.mean([k(p, q) for p in a for q in b]))
        assert mmd_tv_hists(a, b) == pytest.approx(max(expected, 0.0), abs=1e-12)

    def test_different_sets_positive(self):
        cycles = list(gen_toy("cycles", 6, 2).graphs)
        stars = list(gen_toy("stars", 6, 2).graphs)
        assert mmd_tv(cycles, stars, "degree") > 0.1

    def test_rejects_empty_and_unknown(self):
        graphs = list(gen_toy("cycles", 6, 1).graphs)
        with pytest.raises(ValueError):
            mmd_tv(graphs, [], "degree")
        with pytest.raises(ValueError):
            mmd_tv(graphs, graphs, "betweenness")


class TestValidity:

    def test_planarity(self):
        assert is_planar(from_networkx(nx.complete_graph(4)))
        assert not is_planar(from_networkx(nx.complete_graph(5)))
        assert not is_planar(from_networkx(nx.complete_bipartite_graph(3, 3)))

    def test_triangulation_stays_planar_after_edge_deletion(self, rng):
        g = gen_planar(rng, 12)
        assert planar_valid(g)
        for i, j in zip(*np.nonzero(np.triu(g.adjacency, k=1))):
            adj = g.adjacency.copy()
            adj[i, j] = adj[j, i] = 0
            assert is_planar(LabeledGraph(g.n, adj))

    def test_planar_valid_requires_connected(self):
        assert planar_valid(from_networkx(nx.cycle_graph(5)))
        assert not planar_valid(from_edges(4, [(0, 1), (2, 3)]))

    def test_clique_is_not_sbm(self):
        assert not sbm_valid(from_networkx(nx.complete_graph(30)))

    def test_empty_graph_is_not_sbm(self):
        assert not sbm_valid(from_networkx(nx.empty_graph(40)))

    def test_fit_blocks_recovers_three_blocks(self, rng):
        sizes = [25, 30, 35]
        g = gen_sbm(rng, sizes=sizes)
        truth = np.repeat(np.arange(3), sizes)
        labels = fit_blocks(g)
        assert labels.max() + 1 == 3
        assert adjusted_rand_score(truth, labels) >= 0.95

    def test_toy_valid(self):
        assert toy_valid(gen_toy("stars", 6, 1).graphs[0])
        assert not toy_valid(from_networkx(nx.complete_graph(6)))


@pytest.mark.slow
class TestSBMValidity:

    def test_default_draws_accepted(self, rng):
        accepted = [sbm_valid(gen_sbm(rng)) for _ in range(200)]
        assert np.mean(accepted) >= 0.9

    def test_erdos_renyi_rejected(self, rng):
        rejected = [not sbm_valid(from_networkx(nx.gnp_random_graph(120, 0.2, seed=int(rng.integers(2 ** 31)))))
                    for _ in range(20)]
        assert np.mean(rejected) >= 0.9


class TestVUN:

    def test_counts(self):
        cycle = gen_toy("cycles", 6, 1).graphs[0]
        path = gen_toy("paths", 6, 1).graphs[0]
        star = gen_toy("stars", 6, 1).graphs[0]
        report = vun([cycle, cycle.permute(np.array([1, 2, 3, 4, 5, 0])), star, path], [path])
        assert report["valid"] == 100.0
        assert report["unique"] == 75.0
        assert report["novel"] == 75.0
        assert report["vun"] == 50.0

    def test_validity_rule(self):
        graphs = [from_networkx(nx.complete_graph(5)), from_networkx(nx.cycle_graph(5))]
        report = vun(graphs, [], "planar")
        assert report["validity"] == [False, True]
        assert report["valid"] == 50.0

    def test_toy_rule_uses_training_families(self):
        cycle = gen_toy("cycles", 6, 1).graphs[0]
        path = gen_toy("paths", 6, 1).graphs[0]
        star = gen_toy("stars", 6, 1).graphs[0]
        assert vun([cycle, star], [path, cycle], "toy")["validity"] == [True, False]
        assert vun([cycle, star], [], "toy")["validity"] == [True, True]

    def test_rejects_unknown_rule(self):
        with pytest.raises(ValueError):
            vun(list(gen_toy("cycles", 5, 1).graphs), [], "chemistry")

    def test_evaluate_reference_against_itself(self):
        graphs = list(gen_toy("mixed", 6, 3).graphs)
        report = evaluate(graphs, graphs)
        assert set(report["mmd"]) == {"degree", "clustering", "orbit", "spectral"}
        assert all(v == pytest.approx(0.0, abs=1e-12) for v in report["mmd"].values())
        assert report["novel"] == 0.0
        assert report["unique"] == 100.0
