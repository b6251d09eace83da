import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divflow.driver import reference_maxflow
from divflow.errors import ContractError, DimensionError, ParseError, StateError
from divflow.graph import (
    Graph,
    apply_incidence,
    apply_incidence_transpose,
    flow_value,
    parse_dimacs,
    precondition,
    random_instance,
    reduce_directed_to_undirected,
    to_dimacs,
)


def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (2, 0)], [1.0, 1.0, 1.0])


def test_single_edge_demand_is_chi():
    G = Graph.from_edges(2, [(0, 1)], [1.0])
    np.testing.assert_array_equal(apply_incidence_transpose(G, np.array([1.0])), [-1.0, 1.0])
    np.testing.assert_array_equal(G.chi(0, 1), [-1.0, 1.0])


def test_zero_flow_has_zero_demand():
    G = triangle()
    np.testing.assert_array_equal(apply_incidence_transpose(G, np.zeros(3)), np.zeros(3))


def test_cycle_flow_is_circulation():
    np.testing.assert_array_equal(apply_incidence_transpose(triangle(), np.ones(3)), np.zeros(3))


def test_incidence_dimension_errors():
    G = triangle()
    with pytest.raises(DimensionError):
        apply_incidence_transpose(G, np.ones(2))
    with pytest.raises(DimensionError):
        apply_incidence(G, np.ones(4))


def test_potential_differences():
    G = Graph.from_edges(2, [(0, 1)], [1.0])
    np.testing.assert_array_equal(apply_incidence(G, np.array([0.0, 1.0])), [1.0])
    np.testing.assert_allclose(apply_incidence(triangle(), np.full(3, 2.5)), 0.0)


def test_incidence_matches_sparse_matrix():
    G, _, _ = random_instance(3, 8, 15, 4)
    rng = np.random.default_rng(0)
    f = rng.normal(size=G.m)
    y = rng.normal(size=G.n)
    np.testing.assert_allclose(G.incidence.T @ f, apply_incidence_transpose(G, f))
    np.testing.assert_allclose(G.incidence @ y, apply_incidence(G, y))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adjointness_and_zero_sum(seed):
    rng = np.random.default_rng(seed)
    G, _, _ = random_instance(seed, int(rng.integers(2, 12)), int(rng.integers(1, 25)), 5)
    f = rng.normal(size=G.m)
    y = rng.normal(size=G.n)
    lhs = apply_incidence(G, y) @ f
    rhs = y @ apply_incidence_transpose(G, f)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs), np.abs(f).sum() * np.abs(y).max())
    assert abs(apply_incidence_transpose(G, f).sum()) <= 1e-12 * max(1.0, np.abs(f).sum())


def test_graph_rejects_self_loops_and_bad_caps():
    with pytest.raises(ContractError):
        Graph.from_edges(2, [(1, 1)], [1.0])
    with pytest.raises(ContractError):
        Graph.from_edges(2, [(0, 1)], [-1.0])
    with pytest.raises(ContractError):
        Graph.from_edges(2, [(0, 2)], [1.0])


def test_precondition_single_edge():
    G = Graph.from_edges(2, [(0, 1)], [3.0])
    Gp = precondition(G, 0, 1)
    assert Gp.m == 2 and Gp.preconditioned
    np.testing.assert_array_equal(Gp.precond_edge_ids, [1])
    assert Gp.cap_up[1] == Gp.cap_down[1] == 6.0
    assert reference_maxflow(Gp, 0, 1)[0] == 9.0


def test_precondition_empty_graph():
    G = Graph(3, [], [], [], [])
    Gp = precondition(G, 0, 2)
    assert Gp.m == 0 and Gp.preconditioned


def test_precondition_errors():
    G = Graph.from_edges(2, [(0, 1)], [3.0])
    with pytest.raises(StateError):
        precondition(precondition(G, 0, 1), 0, 1)
    with pytest.raises(ContractError):
        precondition(Graph.from_edges(2, [(0, 1)], [3.0], [0.0]), 0, 1)


@pytest.mark.parametrize("seed", range(5))
def test_precondition_value_shift(seed):
    G, a, b = random_instance(seed, 8, 12, 5, directed=False)
    base = reference_maxflow(G, a, b)[0]
    shifted = reference_maxflow(precondition(G, a, b), a, b)[0]
    assert shifted - base == 2 * 12 * G.U


def test_reduction_identity_on_undirected():
    G, a, b = random_instance(1, 6, 9, 3, directed=False)
    H, offset = reduce_directed_to_undirected(G, a, b)
    assert H is G and offset == 0.0


def test_reduction_single_arc():
    G = Graph.from_edges(2, [(0, 1)], [4.0], [0.0])
    H, offset = reduce_directed_to_undirected(G, 0, 1)
    assert H.is_undirected
    assert reference_maxflow(H, 0, 1)[0] - offset == 4.0


@pytest.mark.parametrize("seed", range(20))
def test_reduction_round_trip(seed):
    rng = np.random.default_rng(seed)
    G, a, b = random_instance(seed, int(rng.integers(2, 11)), int(rng.integers(1, 20)), 5)
    H, offset = reduce_directed_to_undirected(G, a, b)
    assert H.is_undirected
    assert H.m <= 3 * G.m and H.n == G.n
    assert reference_maxflow(H, a, b)[0] - offset == reference_maxflow(G, a, b)[0]


def test_reduction_handles_reverse_excess():
    # an edge with more capacity against its orientation
    G = Graph.from_edges(3, [(1, 0), (1, 2)], [1.0, 2.0], [5.0, 0.0])
    H, offset = reduce_directed_to_undirected(G, 0, 2)
    assert reference_maxflow(H, 0, 2)[0] - offset == reference_maxflow(G, 0, 2)[0] == 2.0


def test_parse_single_edge():
    G, a, b = parse_dimacs("p max 2 1\nn 1 s\nn 2 t\na 1 2 5\n")
    assert (G.n, G.m, a, b) == (2, 1, 0, 1)
    assert G.cap_up[0] == 5.0 and G.cap_down[0] == 0.0


def test_parse_empty_arcs_and_comments():
    G, a, b = parse_dimacs("c nothing here\np max 3 0\nn 1 s\nn 3 t\n")
    assert G.m == 0 and (a, b) == (0, 2)


@pytest.mark.parametrize("text", [
    "a 1 2 5\n",
    "p max 2 1\nn 1 s\nn 2 t\na 1 2\n",
    "p max 2 1\nn 1 s\nn 2 t\na 1 1 3\n",
    "p max 2 2\nn 1 s\nn 2 t\na 1 2 3\n",
    "p max 2 1\nn 1 s\na 1 2 3\n",
    "p max 2 1\nn 1 s\nn 2 t\na 1 3 3\n",
])
def test_parse_errors(text):
    with pytest.raises(ParseError) as err:
        parse_dimacs(text)
    assert "line" in str(err.value) or "missing" in str(err.value) or "expected" in str(err.value)


def test_dimacs_round_trip():
    G, a, b = random_instance(4, 7, 12, 6)
    H, a2, b2 = parse_dimacs(to_dimacs(G, a, b))
    assert (a2, b2) == (a, b)
    np.testing.assert_array_equal(H.tails, G.tails)
    np.testing.assert_array_equal(H.cap_up, G.cap_up)


def test_random_instance_deterministic_and_connected():
    G1, a, b = random_instance(7, 10, 20, 9)
    G2, _, _ = random_instance(7, 10, 20, 9)
    np.testing.assert_array_equal(G1.tails, G2.tails)
    np.testing.assert_array_equal(G1.cap_up, G2.cap_up)
    assert reference_maxflow(G1, a, b)[0] >= 1
    assert np.all(G1.cap_up >= 1) and np.all(G1.cap_up <= 9)
    assert np.all(G1.cap_up == np.round(G1.cap_up))


def test_flow_value_and_feasibility():
    G = Graph.from_edges(3, [(0, 1), (1, 2)], [2.0, 2.0])
    f = np.array([1.5, 1.5])
    assert flow_value(G, f, 0) == 1.5
    assert G.is_feasible(f)
    assert not G.is_feasible(np.array([2.5, 0.0]))
