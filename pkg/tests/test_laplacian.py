import numpy as np
import pytest

from divflow.errors import DomainError, InfeasibleError
from divflow.graph import Graph, apply_incidence, apply_incidence_transpose, random_instance
from divflow.laplacian import (
    LaplacianFactor,
    electric_flow,
    energy,
    min_norm_feasible_flow,
    project_to_circulation,
    route_drift,
    solve_laplacian,
)


def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)], [1.0, 1.0])


def parallel2():
    return Graph.from_edges(2, [(0, 1), (0, 1)], [1.0, 1.0])


def test_path_potentials():
    G = path3()
    y, rep = solve_laplacian(G, np.ones(2), G.chi(0, 2))
    np.testing.assert_allclose(y - y[0], [0.0, 1.0, 2.0], atol=1e-12)
    assert abs(y.sum()) < 1e-12
    assert rep.residual <= 1e-10


def test_zero_demand():
    y, _ = solve_laplacian(path3(), np.ones(2), np.zeros(3))
    np.testing.assert_array_equal(y, 0.0)


def test_parallel_edges_halve_potential():
    G = parallel2()
    y, _ = solve_laplacian(G, np.ones(2), G.chi(0, 1))
    assert y[1] - y[0] == pytest.approx(0.5)
    np.testing.assert_allclose(electric_flow(G, np.ones(2), G.chi(0, 1)), [0.5, 0.5])


def test_series_flow():
    G = path3()
    np.testing.assert_allclose(electric_flow(G, np.array([1.0, 5.0]), G.chi(0, 2)), [1.0, 1.0])


def test_four_cycle_against_closed_form():
    # edges 0-1, 1-2, 2-3, 3-0 with resistances (1,1,1,3), route 0 -> 2
    G = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)], np.ones(4))
    r = np.array([1.0, 1.0, 1.0, 3.0])
    f = electric_flow(G, r, G.chi(0, 2))
    # flows: x on 0-1-2, 1-x on 0-3-2 (edges 2,3 carry -(1-x)); energy 2x^2 + 4(1-x)^2
    x = 4.0 / 6.0
    np.testing.assert_allclose(f, [x, x, -(1 - x), -(1 - x)], atol=1e-12)
    assert energy(r, f) == pytest.approx(2 * x * x + 4 * (1 - x) ** 2)


def test_duality_energy_equals_dty():
    G, a, b = random_instance(2, 12, 30, 5, directed=False)
    rng = np.random.default_rng(1)
    r = rng.uniform(0.1, 3.0, G.m)
    d = G.chi(a, b) * 2.5
    y, _ = solve_laplacian(G, r, d)
    f = apply_incidence(G, y) / r
    assert energy(r, f) == pytest.approx(d @ y, rel=1e-8)
    np.testing.assert_allclose(apply_incidence_transpose(G, f), d, atol=1e-10)


def test_electric_flow_beats_random_feasible_flows():
    G = Graph.from_edges(4, [(0, 1), (1, 3), (0, 2), (2, 3), (1, 2), (0, 3)], np.ones(6))
    rng = np.random.default_rng(5)
    r = rng.uniform(0.5, 2.0, 6)
    f = electric_flow(G, r, G.chi(0, 3))
    best = energy(r, f)
    for _ in range(10_000):
        g = f + project_to_circulation(G, rng.normal(size=6))
        assert energy(r, g) >= best - 1e-9


def test_min_norm_flow():
    G = Graph.from_edges(2, [(0, 1)], [1.0])
    np.testing.assert_allclose(min_norm_feasible_flow(G, G.chi(0, 1)), [1.0])
    np.testing.assert_array_equal(min_norm_feasible_flow(path3(), np.zeros(3)), 0.0)
    G, a, b = random_instance(9, 6, 10, 3, directed=False)
    f = min_norm_feasible_flow(G, G.chi(a, b))
    rng = np.random.default_rng(0)
    for _ in range(1000):
        g = f + project_to_circulation(G, rng.normal(size=G.m))
        assert g @ g >= f @ f - 1e-9


def test_projection_properties():
    G, _, _ = random_instance(3, 9, 20, 4, directed=False)
    rng = np.random.default_rng(3)
    circ = project_to_circulation(G, rng.normal(size=G.m))
    np.testing.assert_allclose(project_to_circulation(G, circ), circ, atol=1e-9)
    np.testing.assert_allclose(project_to_circulation(G, apply_incidence(G, rng.normal(size=G.n))), 0.0, atol=1e-9)
    g = rng.normal(size=G.m)
    pg = project_to_circulation(G, g)
    assert abs((g - pg) @ pg) <= 1e-9 * (g @ g)
    np.testing.assert_allclose(apply_incidence_transpose(G, pg), 0.0, atol=1e-9)
    h = rng.normal(size=G.m)
    assert project_to_circulation(G, h) @ g == pytest.approx(h @ pg, rel=1e-9)


def test_disconnected_components():
    G = Graph.from_edges(4, [(0, 1), (2, 3)], [1.0, 1.0])
    f = electric_flow(G, np.ones(2), np.array([-1.0, 1.0, 2.0, -2.0]))
    np.testing.assert_allclose(f, [1.0, -2.0])
    with pytest.raises(InfeasibleError):
        solve_laplacian(G, np.ones(2), np.array([-1.0, 0.0, 1.0, 0.0]))


def test_bad_resistances():
    with pytest.raises(DomainError):
        LaplacianFactor(path3(), np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        LaplacianFactor(path3(), np.array([1.0, np.inf]))


@pytest.mark.parametrize("method_n", [700])
def test_sparse_path_matches_dense(method_n):
    G, a, b = random_instance(11, method_n, 2 * method_n, 3, directed=False)
    rng = np.random.default_rng(0)
    r = rng.uniform(0.5, 2, G.m)
    fac = LaplacianFactor(G, r)
    assert fac.method == "sparse-lu"
    f = fac.electric_flow(G.chi(a, b))
    np.testing.assert_allclose(apply_incidence_transpose(G, f), G.chi(a, b), atol=1e-9)


def test_route_drift_absorbs_roundoff_imbalance():
    G = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)], np.ones(3))
    # an imbalance far above the solver's check, as left by round-off on a large flow
    d = np.array([-1.0, 0.5, 0.25, 0.25]) * 1e-3 + np.array([1e-5, 0, 0, 0])
    with pytest.raises(InfeasibleError):
        min_norm_feasible_flow(G, d)
    fix = route_drift(G, d)
    np.testing.assert_allclose(apply_incidence_transpose(G, fix), d - d.mean(), atol=1e-15)
    np.testing.assert_array_equal(route_drift(G, np.zeros(4)), np.zeros(3))
