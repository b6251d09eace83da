"""Independent brute-force oracles shared by the test modules."""

import itertools

import numpy as np
from scipy import linalg, optimize

from divflow.graph import Graph
from divflow.laplacian import min_norm_feasible_flow


def circulation_basis(G: Graph) -> np.ndarray:
    """Orthonormal basis (columns) of ``{x : B^T x = 0}``."""
    return linalg.null_space(G.incidence.T.toarray())


def small_cycle_graph(rng, dim: int) -> Graph:
    """Connected graph whose circulation space has dimension ``dim``."""
    n = int(rng.integers(3, 6))
    edges = [(int(rng.integers(0, v)), v) for v in range(1, n)]
    while len(edges) < n - 1 + dim:
        u, v = (int(z) for z in rng.choice(n, size=2, replace=False))
        edges.append((u, v))
    return Graph.from_edges(n, edges, np.ones(len(edges)))


def brute_minimize(fun, x0, C, radius=None):
    """Minimize ``fun(x0 + C z)`` over ``z`` by a grid followed by local polish."""
    k = C.shape[1]
    if k == 0:
        return fun(x0), x0
    R = radius if radius is not None else 4.0 * (1.0 + np.abs(x0).max())

    def g(z):
        return fun(x0 + C @ z)

    if k == 1:
        res = optimize.minimize_scalar(lambda s: g(np.array([s])), bounds=(-R, R), method="bounded",
                                       options={"xatol": 1e-12})
        best = np.array([res.x])
        # the bounded search can stall on flat tails; polish with an unbounded bracket
        res2 = optimize.minimize_scalar(lambda s: g(np.array([s])), bracket=(best[0] - 1e-3, best[0] + 1e-3))
        if res2.fun < g(best):
            best = np.array([res2.x])
        return g(best), x0 + C @ best
    axis = np.linspace(-R, R, 41)
    best, best_val = None, np.inf
    for z in itertools.product(axis, repeat=k):
        z = np.array(z)
        v = g(z)
        if v < best_val:
            best, best_val = z, v
    for method in ("Nelder-Mead", "BFGS", "Nelder-Mead"):
        opts = {"xatol": 1e-13, "fatol": 1e-15, "maxiter": 20000} if method == "Nelder-Mead" else {"gtol": 1e-12}
        res = optimize.minimize(g, best, method=method, options=opts)
        if res.fun <= best_val:
            best, best_val = res.x, res.fun
    return best_val, x0 + C @ best


def brute_flow_problem(G: Graph, d, fun, radius=None):
    """Minimize ``fun`` over flows with demand ``d``."""
    x0 = min_norm_feasible_flow(G, np.asarray(d, dtype=np.float64))
    return brute_minimize(fun, x0, circulation_basis(G), radius)
