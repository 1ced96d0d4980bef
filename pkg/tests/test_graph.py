"""Relational graph structure, aggregation, line graphs, edge-list files."""

from fractions import Fraction

import numpy as np
import pytest

from oracles import aggregate_oracle, line_graph_oracle
from relmp.errors import DataError, GraphError, ShapeError
from relmp.graph import (RelGraph, build_line_graph, degree_profile,
                         load_edge_list, rel_aggregate, save_edge_list)
from relmp.tensor import Tensor, count_flops


def random_graph(rng, num_nodes, num_relations, num_edges):
    triples = set()
    while len(triples) < num_edges:
        triples.add((int(rng.integers(num_nodes)), int(rng.integers(num_nodes)),
                     int(rng.integers(num_relations))))
    return RelGraph(num_nodes, num_relations, sorted(triples))


class TestRelGraphConstruction:
    def test_rejects_out_of_range_node(self):
        with pytest.raises(GraphError):
            RelGraph(2, 1, [(0, 2, 0)])

    def test_rejects_out_of_range_relation(self):
        with pytest.raises(GraphError):
            RelGraph(2, 1, [(0, 1, 1)])

    def test_rejects_duplicate_edge(self):
        with pytest.raises(GraphError):
            RelGraph(2, 1, [(0, 1, 0), (0, 1, 0)])

    def test_allows_self_loop(self):
        g = RelGraph(2, 1, [(0, 0, 0)])
        assert g.in_degree(0, 0) == 1

    def test_neighbors_sorted_ascending(self):
        g = RelGraph(4, 1, [(3, 0, 0), (1, 0, 0), (2, 0, 0)])
        assert g.in_neighbors(0, 0).tolist() == [1, 2, 3]

    def test_canonical_edge_order_independent_of_input_order(self):
        edges = [(3, 0, 0), (1, 2, 1), (0, 1, 0), (2, 2, 1)]
        g1 = RelGraph(4, 2, edges)
        g2 = RelGraph(4, 2, list(reversed(edges)))
        assert g1.edge_list() == g2.edge_list()

    def test_norm_weight_exact_rational(self):
        # degrees that break float reciprocal roundtrips (e.g. 49) stay exact
        for deg in (1, 3, 7, 49, 103):
            g = RelGraph(deg + 1, 1, [(u, deg, 0) for u in range(deg)])
            w = g.norm_weight(deg, 0)
            assert w * deg == 1
            assert isinstance(w, Fraction)

    def test_norm_weight_zero_for_empty(self):
        g = RelGraph(2, 1, [(0, 1, 0)])
        assert g.norm_weight(0, 0) == 0


class TestDegreeProfile:
    def test_known_graph(self):
        g = RelGraph(4, 2, [(0, 1, 0), (2, 1, 0), (1, 0, 0), (3, 2, 1)])
        prof = degree_profile(g)
        assert prof.per_relation == [3 / 4, 1 / 4]
        assert prof.overall == 4 / (2 * 4)

    def test_empty_graph(self):
        prof = degree_profile(RelGraph(3, 2, []))
        assert prof.per_relation == [0.0, 0.0] and prof.overall == 0.0


class TestRelAggregate:
    def test_two_node_cycle(self):
        g = RelGraph(2, 1, [(0, 1, 0), (1, 0, 0)])
        out = rel_aggregate(g, Tensor([[1.0], [3.0]]))
        assert np.array_equal(out.data, [[3.0], [1.0]])

    def test_empty_neighborhood_gives_zero_row(self):
        g = RelGraph(3, 2, [(0, 1, 0)])
        out = rel_aggregate(g, Tensor(np.ones((3, 2))))
        # node-major rows: v*R + r; only slot (v=1, r=0) is populated
        assert np.array_equal(out.data[1 * 2 + 0], [1.0, 1.0])
        mask = np.ones(6, dtype=bool)
        mask[1 * 2 + 0] = False
        assert np.all(out.data[mask] == 0.0)

    def test_mean_normalization(self):
        g = RelGraph(4, 1, [(0, 3, 0), (1, 3, 0), (2, 3, 0)])
        z = Tensor([[1.0], [2.0], [4.0], [0.0]], dtype=np.float64)
        out = rel_aggregate(g, z)
        assert np.isclose(out.data[3, 0], 7.0 / 3.0)

    def test_against_dense_oracle(self):
        rng = np.random.default_rng(10)
        for trial in range(6):
            g = random_graph(rng, 8, 3, 30)
            z = rng.normal(size=(8, 5))
            out = rel_aggregate(g, Tensor(z, dtype=np.float64))
            want = aggregate_oracle(8, 3, g.edge_list(), z)
            assert np.allclose(out.data, want, rtol=1e-12, atol=1e-12)

    def test_node_relabeling_permutes_slots(self):
        rng = np.random.default_rng(11)
        g = random_graph(rng, 6, 2, 14)
        z = rng.normal(size=(6, 3))
        perm = rng.permutation(6)
        relabeled = RelGraph(6, 2, [(perm[s], perm[d], r) for s, d, r in g.edge_list()])
        z_perm = np.zeros_like(z)
        z_perm[perm] = z
        base = rel_aggregate(g, Tensor(z, dtype=np.float64)).data
        moved = rel_aggregate(relabeled, Tensor(z_perm, dtype=np.float64)).data
        for v in range(6):
            for r in range(2):
                assert np.allclose(base[v * 2 + r], moved[perm[v] * 2 + r])

    def test_flop_charge_is_two_per_edge_element(self):
        rng = np.random.default_rng(12)
        g = random_graph(rng, 8, 3, 25)
        z = Tensor(rng.normal(size=(8, 4)))
        with count_flops() as c:
            rel_aggregate(g, z)
        assert c.per_op == {"rel_aggregate": 2 * 25 * 4}

    def test_gradient_matches_finite_differences(self):
        from relmp.tensor import finite_difference_check, hadamard, sum_all
        rng = np.random.default_rng(13)
        g = random_graph(rng, 5, 2, 9)
        z = Tensor(rng.normal(size=(5, 3)), requires_grad=True, dtype=np.float64)

        def loss_fn():
            y = rel_aggregate(g, z)
            return sum_all(hadamard(y, y))

        assert finite_difference_check(loss_fn, [z]) < 1e-6

    def test_deterministic_bits_across_runs(self):
        rng = np.random.default_rng(14)
        edges = random_graph(rng, 30, 3, 150).edge_list()
        z = rng.normal(size=(30, 8)).astype(np.float32)
        outs = []
        for _ in range(2):
            shuffled = list(edges)
            np.random.default_rng(99).shuffle(shuffled)
            g = RelGraph(30, 3, shuffled)
            outs.append(rel_aggregate(g, Tensor(z)).data.tobytes())
        assert outs[0] == outs[1]

    def test_row_count_mismatch(self):
        g = RelGraph(3, 1, [(0, 1, 0)])
        with pytest.raises(ShapeError):
            rel_aggregate(g, Tensor(np.ones((4, 2))))


class TestLineGraph:
    def test_right_angle_bin(self):
        # two chained unit steps turning 90 degrees: bin 4 of 8
        coords = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
        g = RelGraph(3, 1, [(0, 1, 0), (1, 2, 0)])
        lg = build_line_graph(g, coords, num_bins=8)
        assert lg.num_nodes == 2
        assert lg.num_relations == 8
        assert lg.edge_list() == [(0, 1, 4)]

    def test_reverse_pair_top_bin_and_switch(self):
        coords = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        g = RelGraph(2, 1, [(0, 1, 0), (1, 0, 0)])
        with_rev = build_line_graph(g, coords, num_bins=8, include_reverse=True)
        assert sorted(with_rev.edge_list()) == [(0, 1, 7), (1, 0, 7)]
        without = build_line_graph(g, coords, num_bins=8, include_reverse=False)
        assert without.edge_list() == []

    def test_self_pair_excluded_and_zero_length_bin(self):
        # self-loop at node 0 chains into (0,1); zero-length displacement -> bin 0
        coords = np.array([[0.0, 0.0], [2.0, 0.0]])
        g = RelGraph(2, 1, [(0, 0, 0), (0, 1, 0)])
        lg = build_line_graph(g, coords, num_bins=8)
        # edge ids in canonical order: (0,0,0) is 0, (0,1,0) is 1
        assert (0, 0, 0) not in lg.edge_list()
        assert (0, 1, 0) in lg.edge_list()

    def test_against_brute_force_oracle(self):
        rng = np.random.default_rng(15)
        for trial in range(5):
            g = random_graph(rng, 7, 2, 16)
            coords = rng.normal(size=(7, 3))
            lg = build_line_graph(g, coords, num_bins=8)
            want = line_graph_oracle(g.edge_list(), coords, num_bins=8)
            assert sorted(lg.edge_list()) == want

    def test_bin_count_sets_relation_count(self):
        g = RelGraph(2, 1, [(0, 1, 0)])
        lg = build_line_graph(g, np.zeros((2, 3)), num_bins=5)
        assert lg.num_relations == 5


class TestEdgeListFiles:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(16)
        g = random_graph(rng, 9, 4, 20)
        path = tmp_path / "graph.tsv"
        save_edge_list(path, g, comments=["demo graph"])
        back = load_edge_list(path)
        assert back.num_nodes == 9 and back.num_relations == 4
        assert back.edge_list() == g.edge_list()

    def test_isolated_trailing_node_preserved(self, tmp_path):
        g = RelGraph(5, 2, [(0, 1, 0)])
        path = tmp_path / "graph.tsv"
        save_edge_list(path, g)
        assert load_edge_list(path).num_nodes == 5

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("0\t1\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_edge_list(path)

    def test_non_integer_field_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("0\tx\t0\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_edge_list(path)
