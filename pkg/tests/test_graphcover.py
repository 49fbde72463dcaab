import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entrobound.graphcover import (
    PAIR_CONSTANT,
    EdgePairing,
    Graph,
    edge_pair_cover,
    epr_wm_bound,
    load_graph,
    parse_edge_list,
    recompute_pair_constant,
)
from entrobound.hamiltonians import build_quantum_maxcut
from entrobound.relaxations import build_loc_for, build_wm
from entrobound.solver import solve


def ground_energy(graph):
    return build_quantum_maxcut(graph.edges).min_eigenvalue()


@st.composite
def connected_graphs(draw, max_nodes=9):
    n = draw(st.integers(2, max_nodes))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    edges = {tuple(sorted((int(rng.integers(v)), v))) for v in range(1, n)}
    extra = draw(st.integers(0, n * (n - 1) // 2))
    for _ in range(extra):
        i, j = rng.choice(n, 2, replace=False)
        edges.add((int(min(i, j)), int(max(i, j))))
    return Graph(sorted(edges))


class TestGraph:
    def test_normalizes(self):
        g = Graph([(2, 1), (1, 0)])
        assert g.edges == ((0, 1), (1, 2))
        assert g.nodes == (0, 1, 2)

    def test_rejects_self_loop(self):
        with pytest.raises(ValueError):
            Graph([(1, 1)])

    def test_undeclared_nodes(self):
        with pytest.raises(ValueError):
            Graph([(0, 1)], nodes=[0])

    def test_disconnected(self):
        with pytest.raises(ValueError):
            edge_pair_cover(Graph([(0, 1), (2, 3)]))

    def test_isolated_node_disconnects(self):
        with pytest.raises(ValueError):
            edge_pair_cover(Graph([(0, 1), (1, 2)], nodes=[0, 1, 2, 3]))

    def test_empty(self):
        with pytest.raises(ValueError):
            edge_pair_cover(Graph([]))


class TestExamples:
    def test_single_edge(self):
        bound, p = epr_wm_bound(Graph([(0, 1)]))
        assert bound == pytest.approx(-1.0)
        assert p.pairs == () and p.unmatched == (0, 1)

    def test_path3(self):
        bound, p = epr_wm_bound(Graph([(0, 1), (1, 2)]))
        assert bound == pytest.approx(2 * PAIR_CONSTANT) == -1.622
        assert len(p.pairs) == 1 and p.unmatched is None

    def test_path4(self):
        g = Graph([(0, 1), (1, 2), (2, 3)])
        bound, p = epr_wm_bound(g)
        assert len(p.pairs) == 1 and p.unmatched is not None
        assert bound == pytest.approx(-2.622)
        p.check(g)

    def test_star(self):
        g = Graph([(0, k) for k in range(1, 5)])
        bound, p = epr_wm_bound(g)
        assert len(p.pairs) == 2 and p.unmatched is None
        assert bound == pytest.approx(-3.244)

    def test_triangle(self):
        g = Graph([(0, 1), (1, 2), (0, 2)])
        bound, _ = epr_wm_bound(g)
        assert bound == pytest.approx(-2.622)
        assert ground_energy(g) == pytest.approx(-1.5)
        assert bound <= ground_energy(g)

    def test_repairing_needed(self):
        # the two centre edges pair first and strand the two pendant edges
        g = Graph([(0, 1), (0, 2), (1, 4), (2, 3)])
        p = edge_pair_cover(g)
        p.check(g)
        assert p.steps == 1
        assert p.pairs == (((0, 1), (1, 4)), ((0, 2), (2, 3)))

    def test_below_relaxation(self):
        g = Graph([(0, 1), (1, 2), (2, 3), (1, 3)])
        ham = build_quantum_maxcut(g.edges)
        wm = solve(build_wm(build_loc_for(ham, 2, mode="edges"), 2)).lower_bound_certified
        bound, _ = epr_wm_bound(g, recompute_pair_constant())
        assert bound <= wm + 1e-6


class TestPairConstant:
    def test_recompute(self):
        assert recompute_pair_constant() == pytest.approx(PAIR_CONSTANT, abs=2e-3)
        assert recompute_pair_constant() <= ground_energy(Graph([(0, 1), (1, 2)])) / 2


class TestCheck:
    def test_detects_non_adjacent(self):
        g = Graph([(0, 1), (1, 2), (2, 3), (3, 4)])
        with pytest.raises(AssertionError):
            EdgePairing((((0, 1), (2, 3)), ((1, 2), (3, 4)))).check(g)

    def test_detects_missing_edge(self):
        g = Graph([(0, 1), (1, 2), (2, 3)])
        with pytest.raises(AssertionError):
            EdgePairing((((0, 1), (1, 2)),)).check(g)


class TestParse:
    def test_lines(self):
        g = parse_edge_list("# ring\n0 1\n1 2  # middle\n\n2 0\n")
        assert g.edges == ((0, 1), (0, 2), (1, 2))

    def test_json(self):
        assert parse_edge_list("[[0, 1], [1, 2]]").edges == ((0, 1), (1, 2))
        g = parse_edge_list(json.dumps({"edges": [[0, 1]], "nodes": [0, 1, 2]}))
        assert g.nodes == (0, 1, 2)

    def test_bad_line(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_edge_list("0 1\n0 1 2\n")

    def test_load(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("0 1\n1 2\n")
        assert load_graph(path).edges == ((0, 1), (1, 2))


class TestProperties:
    @settings(max_examples=150)
    @given(connected_graphs(max_nodes=12))
    def test_pairing_invariants(self, g):
        p = edge_pair_cover(g)
        p.check(g)
        m = len(g.edges)
        assert len(p.pairs) == m // 2
        assert p.steps <= m * m

    @settings(max_examples=40)
    @given(connected_graphs(max_nodes=8))
    def test_bound_below_ground_energy(self, g):
        bound, _ = epr_wm_bound(g)
        assert -len(g.edges) <= bound <= ground_energy(g) + 1e-9

    @given(connected_graphs(max_nodes=10))
    def test_deterministic(self, g):
        assert edge_pair_cover(g) == edge_pair_cover(Graph(reversed(g.edges)))
