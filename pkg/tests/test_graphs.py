from itertools import permutations

import numpy as np
import networkx as nx
import pytest

from graphs import (DataGenerator, delaunay_edges, from_edges, from_networkx, gen_planar, gen_sbm, gen_toy,
                    graph_from_dict, is_isomorphic, load_dataset, load_graphs, parse_nodes_spec, permute,
                    save_graphs, toy_family)
from models import FeatureKind


class TestToy:

    def test_edge_counts(self):
        data = gen_toy("mixed", 6, 3)
        assert [g.num_edges for g in data.graphs] == [6, 5, 5]
        assert data.feature_kind is FeatureKind.BINARY_ADJACENCY

    def test_star_degrees(self):
        star = gen_toy("stars", 6, 1).graphs[0]
        assert sorted(star.degrees().tolist()) == [1, 1, 1, 1, 1, 5]

    def test_permuted_copies_stay_in_family(self, rng):
        data = gen_toy("cycles-vs-paths", 7, 4, rng)
        assert [toy_family(g) for g in data.graphs] == ["cycle", "path", "cycle", "path"]

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            gen_toy("unknown", 6, 3)
        with pytest.raises(ValueError):
            gen_toy("cycles", 2, 3)


class TestPermute:

    def test_identity(self):
        g = gen_toy("paths", 5, 1).graphs[0]
        assert permute(g, np.arange(5)) == g

    def test_inverse(self, rng):
        g = from_edges(5, [(0, 1, 2), (1, 2, 1), (3, 4, 3)], labels=[0, 1, 2, 1, 0])
        perm = rng.permutation(5)
        assert permute(permute(g, perm), np.argsort(perm)) == g

    def test_rejects_non_permutation(self):
        g = gen_toy("paths", 4, 1).graphs[0]
        with pytest.raises(ValueError):
            permute(g, [0, 0, 1, 2])


class TestIsomorphism:

    def test_permuted_graph(self, rng):
        g = gen_planar(rng, 12)
        assert is_isomorphic(g, permute(g, rng.permutation(12)))

    def test_same_degrees_different_graphs(self):
        cycle6 = from_networkx(nx.cycle_graph(6))
        triangles = gen_toy("triangles-vs-stars", 6, 1).graphs[0]
        assert sorted(cycle6.degrees()) == sorted(triangles.degrees())
        assert not is_isomorphic(cycle6, triangles)

    def test_all_four_node_graphs_distinct(self):
        graphs = [from_networkx(G) for G in nx.graph_atlas_g() if G.number_of_nodes() == 4]
        assert len(graphs) == 11
        for i, g in enumerate(graphs):
            for j, h in enumerate(graphs):
                assert is_isomorphic(g, h) == (i == j)

    def test_labels_matter(self):
        g = from_edges(3, [(0, 1), (1, 2)], labels=[0, 1, 0])
        h = from_edges(3, [(0, 1), (1, 2)], labels=[1, 0, 0])
        assert not is_isomorphic(g, h)
        assert is_isomorphic(g, from_edges(3, [(0, 2), (2, 1)], labels=[0, 0, 1]))

    def test_edge_weights_matter(self):
        g = from_edges(3, [(0, 1, 1), (1, 2, 2)])
        h = from_edges(3, [(0, 1, 2), (1, 2, 1)])
        k = from_edges(3, [(0, 1, 1), (1, 2, 1)])
        assert is_isomorphic(g, h)
        assert not is_isomorphic(g, k)

    def test_agrees_with_exhaustive_search(self, rng):
        def brute_force(g, h):
            return any(np.array_equal(g.adjacency[np.ix_(p, p)], h.adjacency)
                       for p in map(list, permutations(range(g.n))))

        for _ in range(500):
            n = int(rng.integers(1, 7))
            g = from_networkx(nx.gnp_random_graph(n, 0.5, seed=int(rng.integers(2 ** 31))))
            if rng.random() < 0.5:
                h = permute(g, rng.permutation(n))
            else:
                h = from_networkx(nx.gnm_random_graph(n, g.num_edges, seed=int(rng.integers(2 ** 31))))
            assert is_isomorphic(g, h) == brute_force(g, h)


class TestPlanar:

    def test_convex_quadrilateral(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0], [1.2, 1.0], [0.0, 0.8]])
        assert len(delaunay_edges(points)) == 5

    def test_cocircular_points_are_jittered(self, rng):
        square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(ArithmeticError):
            delaunay_edges(square)
        assert gen_planar(rng, points=square).num_edges == 5

    def test_random_triangulation(self, rng):
        n = 20
        G = gen_planar(rng, n).to_networkx()
        assert nx.check_planarity(G)[0]
        assert nx.is_connected(G)
        assert n - 1 <= G.number_of_edges() <= 3 * n - 6


@pytest.mark.slow
class TestPlanarDraws:

    def test_sixty_four_nodes_connected_and_planar(self, rng):
        for _ in range(100):
            G = gen_planar(rng, 64).to_networkx()
            assert nx.is_connected(G)
            assert nx.check_planarity(G)[0]


class TestSBM:

    def test_no_inter_community_edges(self, rng):
        g = gen_sbm(rng, sizes=[5, 6], p_intra=0.5, p_inter=0.0)
        assert g.n == 11
        assert not np.any(g.adjacency[:5, 5:])

    def test_single_full_block(self, rng):
        g = gen_sbm(rng, sizes=[10], p_intra=1.0)
        assert g.num_edges == 45

    def test_edge_count_matches_binomial_mean(self, rng):
        sizes = [20, 30, 25]
        inner = sum(s * (s - 1) // 2 for s in sizes)
        cross = sum(a * b for i, a in enumerate(sizes) for b in sizes[i + 1:])
        mean = 0.3 * inner + 0.05 * cross
        sd = np.sqrt(0.3 * 0.7 * inner + 0.05 * 0.95 * cross)
        counts = np.array([gen_sbm(rng, sizes=sizes).num_edges for _ in range(200)])
        assert np.all(np.abs(counts - mean) <= 4 * sd)
        assert abs(counts.mean() - mean) <= 4 * sd / np.sqrt(len(counts))

    def test_random_community_count(self, rng):
        for _ in range(10):
            g = gen_sbm(rng, size_range=(3, 4))
            assert 6 <= g.n <= 20


class TestIO:

    def test_round_trip(self, tmp_path):
        graphs = [from_edges(4, [(0, 1, 2), (2, 3, 1)], labels=[0, 1, 0, 2]),
                  from_edges(4, [(0, 3, 3)], labels=[1, 1, 1, 1])]
        path = tmp_path / "graphs.json"
        save_graphs(str(path), graphs)
        assert load_graphs(str(path)) == graphs
        assert load_dataset(str(path)).feature_kind is FeatureKind.BOND_TYPE

    def test_invalid_edge(self):
        with pytest.raises(ValueError):
            graph_from_dict({"n": 3, "edges": [[2, 1, 1]]})
        with pytest.raises(ValueError):
            graph_from_dict({"n": 3, "edges": [[0, 3, 1]]})

    def test_not_a_list(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"n": 3}', encoding="utf-8")
        with pytest.raises(ValueError):
            load_graphs(str(path))


class TestDataGenerator:

    @pytest.mark.parametrize("spec, expected", [("6", (6, 6)), ("3-5", (3, 5)), (12, (12, 12))])
    def test_parse_nodes_spec(self, spec, expected):
        assert parse_nodes_spec(spec) == expected

    @pytest.mark.parametrize("spec", ["5-3", "a", "0", "1-2-3"])
    def test_parse_nodes_spec_rejects(self, spec):
        with pytest.raises(ValueError):
            parse_nodes_spec(spec)

    def test_toy_fixed_size(self):
        graphs = DataGenerator(0).generate("toy", 6, "5", "mixed")
        assert [toy_family(g) for g in graphs] == ["cycle", "path", "star"] * 2

    def test_toy_size_range(self):
        graphs = DataGenerator(0).generate("toy", 10, "4-7", "cycles")
        assert all(4 <= g.n <= 7 and g.num_edges == g.n for g in graphs)

    def test_planar_and_sbm(self):
        generator = DataGenerator(3)
        planar = generator.generate("planar", 2, "10")
        assert all(g.n == 10 for g in planar)
        sbm = generator.generate("sbm", 2, "3-4")
        assert all(6 <= g.n <= 20 for g in sbm)

    def test_deterministic(self):
        first = DataGenerator(7).generate("planar", 3, "8-12")
        second = DataGenerator(7).generate("planar", 3, "8-12")
        assert first == second

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            DataGenerator(0).generate("grid", 2)
        with pytest.raises(ValueError):
            DataGenerator(0).generate("toy", 0)
