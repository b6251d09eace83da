"""Weighted Laplacian solves and electric flows.

For resistances ``r`` the Laplacian is ``L = B^T R^{-1} B``.  Each connected
component is grounded at its lowest-id vertex; the grounded system is
factored once (dense Cholesky for small ``n``, sparse LU up to ``5e4``
vertices, Jacobi-preconditioned CG above) and potentials are re-centered to
mean zero per component.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, DimensionError, DomainError, InfeasibleError
from .graph import Graph, apply_incidence, apply_incidence_transpose

DEFAULT_TOL = 1e-10
DENSE_MAX_N = 600
DIRECT_MAX_N = 50_000
RESISTANCE_CEILING = 2.0 ** 200


@dataclass(frozen=True)
class LinearSolveReport:
    residual: float
    iterations: int
    method: str


class LaplacianFactor:
    """Reusable factorization of a weighted Laplacian.

    Immutable after construction, so one factor can serve many solves.
    """

    def __init__(self, G: Graph, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (G.m,):
            raise DimensionError(f"resistances have shape {r.shape}, expected ({G.m},)")
        if np.any(~np.isfinite(r)) or np.any(r <= 0):
            raise DomainError("resistances must be positive and finite")
        if np.any(r > RESISTANCE_CEILING):
            raise DomainError("resistance exceeds configured ceiling")
        self.G = G
        self.r = r
        n = G.n
        cond = 1.0 / r
        st = _structure(G)
        self.ncomp, self.labels, self.free = st.ncomp, st.labels, st.free
        self._counts = st.counts
        k = len(self.free)
        if k == 0:
            self.method = "trivial"
            self.L = None
        elif n <= DENSE_MAX_N:
            self.method = "dense-cholesky"
            Bd = st.dense
            self.L = (Bd.T * cond) @ Bd
            Lf = self.L[np.ix_(self.free, self.free)]
            self._cho = la.cho_factor(Lf, lower=True, check_finite=False)
        else:
            B = G.incidence
            self.L = (B.T @ sp.diags(cond) @ B).tocsr()
            Lf = self.L[self.free][:, self.free]
            if n <= DIRECT_MAX_N:
                self.method = "sparse-lu"
                self._lu = spla.splu(Lf.tocsc())
            else:
                self.method = "pcg"
                self._Lf = Lf
                self._jacobi = sp.diags(1.0 / Lf.diagonal())

    def _center(self, y):
        means = np.bincount(self.labels, weights=y, minlength=self.ncomp) / self._counts
        return y - means[self.labels]

    def _apply_L(self, y):
        if self.L is None:
            return np.zeros_like(y)
        return self.L @ y

    def _solve_free(self, rhs, tol):
        if self.method == "dense-cholesky":
            return la.cho_solve(self._cho, rhs, check_finite=False), 1
        if self.method == "sparse-lu":
            return self._lu.solve(rhs), 1
        it = [0]

        def cb(_):
            it[0] += 1

        x, info = spla.cg(self._Lf, rhs, rtol=tol * 0.1, atol=0.0, M=self._jacobi,
                          maxiter=10 * len(rhs), callback=cb)
        if info != 0:
            res = np.linalg.norm(self._Lf @ x - rhs)
            raise ConvergenceError("conjugate gradient did not converge", best=x, residual=res)
        return x, it[0]

    def solve(self, d, tol: float = DEFAULT_TOL):
        """Potentials ``y`` with ``L y = d``; returns ``(y, LinearSolveReport)``."""
        d = np.asarray(d, dtype=np.float64)
        if d.shape != (self.G.n,):
            raise DimensionError(f"demand has shape {d.shape}, expected ({self.G.n},)")
        scale = max(np.abs(d).sum(), 1e-300)
        comp_sums = np.bincount(self.labels, weights=d, minlength=self.ncomp)
        if np.any(np.abs(comp_sums) > 1e-9 * scale + 1e-13):
            raise InfeasibleError("demand does not sum to zero on every component")
        # drop round-off imbalance so the grounded system stays consistent
        d = d - (comp_sums / self._counts)[self.labels]
        y = np.zeros(self.G.n)
        iters = 0
        if len(self.free):
            y[self.free], iters = self._solve_free(d[self.free], tol)
        y = self._center(y)
        dnorm = np.linalg.norm(d)
        res = float(np.linalg.norm(self._apply_L(y) - d))
        if dnorm > 0 and res > tol * dnorm:
            # one step of iterative refinement usually recovers full accuracy
            resid = self._center(d - self._apply_L(y))
            corr = np.zeros_like(y)
            corr[self.free], extra = self._solve_free(resid[self.free], tol)
            iters += extra
            y += self._center(corr)
            res = float(np.linalg.norm(self._apply_L(y) - d))
            if res > tol * dnorm:
                raise ConvergenceError("Laplacian solve missed tolerance", best=y, residual=res)
        return y, LinearSolveReport(res, iters, self.method)

    def electric_flow(self, d, tol: float = DEFAULT_TOL) -> np.ndarray:
        y, _ = self.solve(d, tol)
        return apply_incidence(self.G, y) / self.r


@dataclass(frozen=True)
class _Structure:
    ncomp: int
    labels: np.ndarray
    counts: np.ndarray
    free: np.ndarray
    dense: np.ndarray | None


_STRUCTURES: "weakref.WeakKeyDictionary[Graph, _Structure]" = weakref.WeakKeyDictionary()


def _structure(G: Graph) -> _Structure:
    st = _STRUCTURES.get(G)
    if st is None:
        n = G.n
        adj = sp.csr_matrix((np.ones(G.m), (G.tails, G.heads)), shape=(n, n))
        ncomp, labels = connected_components(adj, directed=False)
        _, first = np.unique(labels, return_index=True)
        grounded = np.zeros(n, dtype=bool)
        grounded[first] = True
        dense = G.incidence.toarray() if n <= DENSE_MAX_N else None
        st = _Structure(ncomp, labels, np.bincount(labels, minlength=ncomp).astype(float),
                        np.flatnonzero(~grounded), dense)
        _STRUCTURES[G] = st
    return st


def solve_laplacian(G: Graph, r, d, tol: float = DEFAULT_TOL):
    """Solve ``B^T R^{-1} B y = d``; returns ``(y, LinearSolveReport)``."""
    return LaplacianFactor(G, r).solve(d, tol)


def electric_flow(G: Graph, r, d, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Flow routing ``d`` that minimizes the energy ``sum r_e f_e^2``."""
    return LaplacianFactor(G, r).electric_flow(d, tol)


def min_norm_feasible_flow(G: Graph, d, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``B (B^T B)^+ d``: the minimum 2-norm flow routing ``d``."""
    if G.m == 0:
        d = np.asarray(d, dtype=np.float64)
        if np.any(d != 0):
            raise InfeasibleError("nonzero demand on a graph without edges")
        return np.zeros(0)
    return electric_flow(G, np.ones(G.m), d, tol)


def route_drift(G: Graph, d, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Minimum 2-norm flow routing a round-off drift ``d``.

    A drift measured against a large flow carries round-off of that flow in
    its component sums, so the per-component mean is removed before routing.
    """
    d = np.asarray(d, dtype=np.float64)
    if G.m == 0 or not np.any(d):
        return np.zeros(G.m)
    fac = LaplacianFactor(G, np.ones(G.m))
    means = np.bincount(fac.labels, weights=d, minlength=fac.ncomp) / fac._counts
    return fac.electric_flow(d - means[fac.labels], tol)


def project_to_circulation(G: Graph, g, tol: float = DEFAULT_TOL, factor: LaplacianFactor | None = None) -> np.ndarray:
    """Orthogonal projection of an edge vector onto ``ker B^T``."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (G.m,):
        raise DimensionError(f"edge vector has shape {g.shape}, expected ({G.m},)")
    if G.m == 0:
        return g.copy()
    if factor is None:
        factor = LaplacianFactor(G, np.ones(G.m))
    d = apply_incidence_transpose(G, g)
    y, _ = factor.solve(d, tol)
    return g - apply_incidence(G, y)


def energy(r, f) -> float:
    return float(np.dot(r, np.asarray(f) ** 2))
