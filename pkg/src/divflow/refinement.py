"""Iterative refinement for separable convex flow objectives.

Objectives have the form ``sum_i q_i(x_i) + W * sum_i h_i(x_i)^p`` (the
power form) or ``sum_i q_i(x_i) + ||h(x)||_p`` (the norm form) over flows with
``B^T x = d``.  Each refinement step linearizes at ``x``, bounds the remainder
above and below by quadratic-plus-``2p``-power terms, and hands the resulting
smoothed problem over circulations to :func:`oracle_2p`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .barrier import phitilde_all
from .errors import ContractError, ConvergenceError, CurvatureError, SearchError, StallError
from .graph import Graph, apply_incidence, apply_incidence_transpose
from .laplacian import LaplacianFactor, min_norm_feasible_flow, route_drift

SANDWICH_SLACK = 1e-12


# -- pieces ------------------------------------------------------------------

@dataclass(frozen=True)
class SeparableConvexPiece:
    """A family of scalar convex functions evaluated coordinate-wise.

    ``scale`` is the curvature scale: ``a_i`` for q-type pieces
    (``a_i/4 <= q_i'' <= 4 a_i``) and ``b_i`` for h-type pieces
    (``b_i/4 <= h_i'' <= 4 b_i`` and ``h_i(0) = h_i'(0) = 0``).
    """

    value: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    scale: np.ndarray
    kind: str = "q"

    def __post_init__(self):
        if self.kind not in ("q", "h"):
            raise ContractError("kind must be 'q' or 'h'")
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))

    def check_curvature(self, grid) -> bool:
        """Spot-check the curvature contract on a grid of points (per coordinate)."""
        grid = np.asarray(grid, dtype=np.float64)
        for x in grid:
            xs = np.full(self.scale.shape, x)
            h2 = self.d2(xs)
            if np.any(h2 < self.scale / 4 * (1 - 1e-12)) or np.any(h2 > 4 * self.scale * (1 + 1e-12)):
                return False
        if self.kind == "h":
            z = np.zeros(self.scale.shape)
            if np.any(np.abs(self.value(z)) > 0) or np.any(np.abs(self.d1(z)) > 0):
                return False
        return True


def quadratic_piece(a, center=0.0, kind: str = "q") -> SeparableConvexPiece:
    """``a/2 * (x - center)^2``; h-type requires ``center = 0``."""
    a = np.asarray(a, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    return SeparableConvexPiece(
        lambda x: 0.5 * a * (x - c) ** 2,
        lambda x: a * (x - c),
        lambda x: a + 0.0 * x,
        a,
        kind,
    )


def phitilde_piece(scale=1.0, epsilon: float = 0.1, kind: str = "h") -> SeparableConvexPiece:
    """``2 * scale * phitilde(x)``; curvature lies in ``[scale, 4 scale]``."""
    s = np.asarray(scale, dtype=np.float64)
    return SeparableConvexPiece(
        lambda x: 2 * s * phitilde_all(x, epsilon)[0],
        lambda x: 2 * s * phitilde_all(x, epsilon)[1],
        lambda x: 2 * s * phitilde_all(x, epsilon)[2],
        s,
        kind,
    )


def softplus_piece(a, shift=0.0) -> SeparableConvexPiece:
    """``a*x^2/2 + a*log(1 + exp(x - shift))/4``: q-type, curvature in ``[a, 17a/16]``."""
    a = np.asarray(a, dtype=np.float64)
    sh = np.asarray(shift, dtype=np.float64)

    def sig(z):
        return 0.5 * (1 + np.tanh(z / 2))

    return SeparableConvexPiece(
        lambda x: 0.5 * a * x * x + 0.25 * a * np.logaddexp(0.0, x - sh),
        lambda x: a * x + 0.25 * a * sig(x - sh),
        lambda x: a + 0.25 * a * sig(x - sh) * (1 - sig(x - sh)),
        a,
        "q",
    )


# -- sandwich expansions -------------------------------------------------------

def _ordered(lower, middle, upper, what):
    lower, middle, upper = (np.asarray(v, dtype=np.float64) for v in (lower, middle, upper))
    slack = SANDWICH_SLACK * np.maximum(1.0, np.abs(upper))
    if np.any(lower > middle + slack) or np.any(middle > upper + slack):
        raise CurvatureError(f"{what} sandwich violated")
    return lower, middle, upper


def sandwich_quadratic(q: SeparableConvexPiece, x, delta, c1, c2):
    """``(c1 D^2/2, q(x+D) - q(x) - q'(x) D, c2 D^2/2)`` with ordering asserted."""
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    middle = q.value(x + delta) - q.value(x) - q.d1(x) * delta
    return _ordered(0.5 * c1 * delta ** 2, middle, 0.5 * c2 * delta ** 2, "quadratic")


def sandwich_power(h: SeparableConvexPiece, p: int, x, delta, c1, c2):
    """Second-order remainder of ``h^p`` bracketed by ``x^{2p-2} D^2 + D^{2p}`` terms."""
    if p <= 0 or p % 2:
        raise ContractError("p must be a positive even integer")
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    hx = h.value(x)
    middle = h.value(x + delta) ** p - hx ** p - p * hx ** (p - 1) * h.d1(x) * delta
    shape = x ** (2 * p - 2) * delta ** 2 + delta ** (2 * p)
    lower = (8.0 * c2) ** (-2 * p) * c1 ** (3 * p) * shape
    upper = (16.0 * c2) ** p * shape
    return _ordered(lower, middle, upper, "power")


def sandwich_power_base(p: int, x, delta):
    """Base inequality for ``(x + D)^p`` around ``x`` with even ``p``."""
    if p <= 0 or p % 2:
        raise ContractError("p must be a positive even integer")
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    middle = (x + delta) ** p - (x ** p + p * x ** (p - 1) * delta)
    shape = x ** (p - 2) * delta ** 2 + delta ** p
    return _ordered(2.0 ** (-p) * shape, middle, p * 2.0 ** (p - 1) * shape, "base")


# -- smoothed quadratic + 2p-power oracle ----------------------------------------

@dataclass(frozen=True)
class SmoothedInstance:
    """``sum g x + sum r x^2 + sum b^p x^{2p}`` over circulations of ``G``."""

    G: Graph
    g: np.ndarray
    r: np.ndarray
    b: np.ndarray
    p: int

    def __post_init__(self):
        for name in ("g", "r", "b"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.G.m,):
                raise ContractError(f"{name} must have one entry per edge")
            object.__setattr__(self, name, arr)
        if np.any(self.r < 0) or np.any(self.b < 0):
            raise ContractError("r and b must be nonnegative")
        if self.p <= 0 or self.p % 2:
            raise ContractError("p must be a positive even integer")

    @property
    def beta(self) -> np.ndarray:
        return self.b ** self.p

    def value(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(over="ignore", invalid="ignore"):
            v = self.g @ x + self.r @ (x * x) + self.beta @ (x ** (2 * self.p))
        return float(v) if np.isfinite(v) else math.inf

    def grad(self, x) -> np.ndarray:
        p2 = 2 * self.p
        return self.g + 2 * self.r * x + p2 * self.beta * x ** (p2 - 1)

    def hess_diag(self, x) -> np.ndarray:
        p2 = 2 * self.p
        return 2 * self.r + p2 * (p2 - 1) * self.beta * x ** (p2 - 2)


@dataclass
class OracleReport:
    iterations: int = 0
    decrement: float = 0.0
    value: float = 0.0


def _newton_direction(G: Graph, grad, hdiag, rank_u=None, rank_coef=0.0):
    """Newton step over circulations for Hessian ``diag(h) - coef * u u^T``."""
    # any positive diagonal gives a descent direction; the floor bounds the conditioning
    floor = 1e-10 * max(float(hdiag.max()), 1e-300)
    H = np.maximum(hdiag, floor)
    if not np.any(H > 0):
        H = np.ones_like(hdiag)
    factor = LaplacianFactor(G, H)

    def proj(vec):
        z = vec / H
        try:
            y, _ = factor.solve(apply_incidence_transpose(G, z), tol=1e-9)
        except ConvergenceError as exc:
            # an inexact projection is still a usable direction; drift is removed at the end
            y = exc.best
        return z - apply_incidence(G, y) / H

    step = -proj(grad)
    if rank_u is not None and rank_coef > 0:
        pu = proj(rank_u)
        denom = 1.0 - rank_coef * float(rank_u @ pu)
        if denom > 1e-12:
            s = float(rank_u @ step) / denom
            step = step + rank_coef * s * pu
    return step


def _line_min(func, x, direction, s_hi=1.0):
    """Backtracking line search (Armijo) returning the accepted step length."""
    f0 = func(x)
    s = s_hi
    for _ in range(80):
        fs = func(x + s * direction)
        if fs <= f0:
            return s, fs
        s *= 0.5
    return 0.0, f0


def _ray_minimize(func_grad, direction):
    """Minimize a convex function along the ray ``s * direction``, ``s >= 0``."""
    def dphi(s):
        return float(direction @ func_grad(s * direction))

    if dphi(0.0) >= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(400):
        with np.errstate(over="ignore", invalid="ignore"):
            d = dphi(hi)
        if not np.isfinite(d) or d > 0:
            break
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        with np.errstate(over="ignore", invalid="ignore"):
            d = dphi(mid)
        if np.isfinite(d) and d < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return lo


def oracle_2p(inst: SmoothedInstance, tol: float = 1e-10, max_iter: int = 200, report: OracleReport | None = None):
    """Approximately minimize a smoothed instance over circulations.

    Damped Newton: each direction is one Laplacian solve with resistances set
    to the Hessian diagonal; the first direction is rescaled by an exact ray
    search so the iterate starts at the right magnitude.
    """
    G = inst.G
    rep = report if report is not None else OracleReport()
    x = np.zeros(G.m)
    if G.m == 0 or not np.any(inst.g):
        rep.value = 0.0
        return x
    H0 = inst.hess_diag(x)
    if not np.any(H0 > 0):
        H0 = np.ones(G.m)
    d0 = _newton_direction(G, inst.g, H0)
    s = _ray_minimize(inst.grad, d0)
    x = s * d0
    fx = inst.value(x)
    for it in range(max_iter):
        grad = inst.grad(x)
        step = _newton_direction(G, grad, inst.hess_diag(x))
        dec = -float(grad @ step)
        rep.iterations = it + 1
        rep.decrement = dec
        if dec <= 2 * tol or dec <= 1e-15 * max(abs(fx), 1e-300):
            break
        alpha, fnew = _line_min(inst.value, x, step)
        if alpha == 0.0:
            break
        x = x + alpha * step
        fx = fnew
    else:
        raise ConvergenceError("oracle_2p hit iteration cap", best=x, residual=rep.decrement)
    # strip accumulated demand drift
    x = x - _demand_correction(G, x)
    rep.value = inst.value(x)
    return x


def _demand_correction(G: Graph, x):
    return route_drift(G, apply_incidence_transpose(G, x), tol=1e-12)


# -- power-form and norm-form problems --------------------------------------------

@dataclass
class RefinementProblem:
    """``sum q(x) + W sum h(x)^p`` (``W`` given) or ``sum q(x) + ||h(x)||_p``."""

    G: Graph
    d: np.ndarray
    q: SeparableConvexPiece
    h: SeparableConvexPiece
    p: int
    W: float | None = None

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64)
        if self.p <= 0 or self.p % 2:
            raise ContractError("p must be a positive even integer")
        if abs(self.d.sum()) > 1e-9 * max(1.0, np.abs(self.d).sum()):
            raise ContractError("demand must sum to zero")

    @property
    def a(self) -> np.ndarray:
        return np.broadcast_to(self.q.scale, (self.G.m,))

    @property
    def b(self) -> np.ndarray:
        return np.broadcast_to(self.h.scale, (self.G.m,))

    def value_power(self, x, W: float | None = None) -> float:
        W = self.W if W is None else W
        with np.errstate(over="ignore"):
            v = float(np.sum(self.q.value(x)) + W * np.sum(self.h.value(x) ** self.p))
        return v if np.isfinite(v) else math.inf

    def grad_power(self, x, W: float | None = None) -> np.ndarray:
        W = self.W if W is None else W
        hx = self.h.value(x)
        return self.q.d1(x) + W * self.p * hx ** (self.p - 1) * self.h.d1(x)

    def value_norm(self, x) -> float:
        from .barrier import lp_norm
        return float(np.sum(self.q.value(x)) + lp_norm(self.h.value(x), self.p))

    def grad_norm(self, x) -> np.ndarray:
        from .barrier import lp_norm
        hx = self.h.value(x)
        N = lp_norm(hx, self.p)
        g = self.q.d1(x)
        if N > 0:
            g = g + (np.abs(hx) / N) ** (self.p - 1) * np.sign(hx) * self.h.d1(x)
        return g


@dataclass
class RefinementTrace:
    values: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    oracle_calls: int = 0


C1_EXP = 16
C2_EXP = 6


def reduce_to_2p(problem: RefinementProblem, tol: float = 1e-10, max_iter: int = 10_000,
                 step_rule: str = "search", x0=None, W: float | None = None,
                 trace: RefinementTrace | None = None, min_iter: int = 0):
    """Minimize the power form by repeated smoothed-oracle refinement steps.

    ``step_rule='floor'`` always steps by ``2^{-22p}``; ``'search'`` picks the
    best step in ``[2^{-22p}, 1]`` and finishes with Newton polishing, since
    near the optimum the oracle's ``l_p`` term makes its directions too long
    and the refinement steps shrink geometrically.  Stops once a sweep
    decreases the objective by less than ``tol / 10``.
    """
    W = problem.W if W is None else W
    if W is None:
        raise ContractError("power form needs a weight W")
    if step_rule not in ("search", "floor"):
        raise ContractError("step_rule must be 'search' or 'floor'")
    G, p = problem.G, problem.p
    q = problem.q
    if np.min(problem.a) == 0:
        q = _regularized(q)
    prob = RefinementProblem(G, problem.d, q, problem.h, p, W)
    a = np.asarray(prob.a, dtype=np.float64)
    b = np.asarray(prob.b, dtype=np.float64)
    x = min_norm_feasible_flow(G, problem.d, tol=1e-12) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    tr = trace if trace is not None else RefinementTrace()
    fx = prob.value_power(x)
    tr.values.append(fx)
    c1 = 2.0 ** (-C1_EXP * p)
    floor = 2.0 ** (-(C1_EXP + C2_EXP) * p)
    b_oracle = 2.0 ** (-C1_EXP) * W ** (1.0 / p) * b if W > 0 else np.zeros_like(b)
    for it in range(max_iter):
        r = a + W * b ** p * x ** (2 * p - 2)
        g = prob.grad_power(x)
        inst = SmoothedInstance(G, g, c1 * r, b_oracle, p)
        scale = abs(fx) + 1.0
        step = oracle_2p(inst, tol=1e-14 * scale / c1)
        tr.oracle_calls += 1
        if step_rule == "floor":
            s = floor
            fnew = prob.value_power(x + s * step)
        else:
            s, fnew = _best_step(lambda t: prob.value_power(x + t * step), floor, p)
        decrease = fx - fnew
        if decrease < 0 and step_rule == "search":
            break
        x = x + s * step
        fx = fnew
        tr.values.append(fx)
        tr.steps.append(s)
        if it + 1 >= min_iter and decrease < tol / 10:
            break
    else:
        if step_rule == "search":
            raise StallError("reduce_to_2p hit its iteration cap", best=x, residual=decrease)
    if step_rule == "search":
        x = _newton_polish(prob, x, W)
    return x


def _newton_polish(prob: RefinementProblem, x, W: float, max_iter: int = 30):
    """Damped Newton on the separable power form over ``x + ker B^T``."""
    q, h, p = prob.q, prob.h, prob.p
    fx = prob.value_power(x, W)
    for _ in range(max_iter):
        hx, h1 = h.value(x), h.d1(x)
        hdiag = q.d2(x)
        if W > 0:
            hdiag = hdiag + W * p * ((p - 1) * hx ** (p - 2) * h1 * h1 + hx ** (p - 1) * h.d2(x))
        step = _newton_direction(prob.G, prob.grad_power(x, W), hdiag)
        s, fnew = _line_min(lambda z: prob.value_power(z, W), x, step)
        if s == 0.0 or fnew >= fx:
            break
        x = x + s * step
        done = fx - fnew <= 1e-15 * (1 + abs(fnew))
        fx = fnew
        if done:
            break
    return x + route_drift(prob.G, prob.d - apply_incidence_transpose(prob.G, x), tol=1e-12)


def _best_step(phi, floor, p):
    lo = math.log2(floor)
    res = optimize.minimize_scalar(lambda u: phi(2.0 ** u), bounds=(lo, 0.0), method="bounded",
                                   options={"xatol": 1e-4})
    s_best = 2.0 ** float(res.x)
    f_best = phi(s_best)
    f_floor = phi(floor)
    if f_floor < f_best:
        return floor, f_floor
    return s_best, f_best


def _regularized(q: SeparableConvexPiece, nu: float = 1e-12) -> SeparableConvexPiece:
    return SeparableConvexPiece(
        lambda x: q.value(x) + nu * x * x,
        lambda x: q.d1(x) + 2 * nu * x,
        lambda x: q.d2(x) + 2 * nu,
        np.maximum(q.scale, 2 * nu),
        q.kind,
    )


def solve_lp_norm(problem: RefinementProblem, tol: float = 1e-10, max_outer: int = 60):
    """Minimize ``sum q(x) + ||h(x)||_p`` through a sequence of power-form solves.

    The minimizer of the norm form also minimizes the power form with weight
    ``lam = ||h(x*)||_p^{1-p} / p``; ``lam`` is found by a damped fixed-point
    iteration, handing over to a bracketing root-find once the iteration
    contracts by less than half per step.
    """
    p = problem.p
    from .barrier import lp_norm

    x_q = reduce_to_2p(problem, tol=tol, W=0.0)
    N_q = lp_norm(problem.h.value(x_q), p)
    if N_q <= 1e-300:
        return x_q

    cache = {}

    def solve_at(lam, x_start):
        x = reduce_to_2p(problem, tol=tol, W=lam, x0=x_start)
        N = lp_norm(problem.h.value(x), p)
        cache[lam] = (x, N)
        return x, N

    def target(N):
        return N ** (1 - p) / p if N > 0 else math.inf

    lam = target(N_q)
    x, N = solve_at(lam, x_q)
    history = [lam]
    for _ in range(max_outer):
        t = target(N)
        if abs(t - lam) <= 1e-11 * lam:
            return x
        new = 0.5 * lam + 0.5 * t
        if len(history) >= 3 and abs(history[-1] - history[-2]) > 0.5 * abs(history[-2] - history[-3]):
            # slow or oscillating contraction: a bracketing root-find is faster
            break
        lam = new
        history.append(lam)
        x, N = solve_at(lam, x)
    return _bracket_lambda(problem, solve_at, target, lam, x, tol)


def _bracket_lambda(problem, solve_at, target, lam, x, tol):
    # F(lam) = log(lam) - log(target(N(lam))) is increasing in lam
    def F(loglam):
        xl, N = solve_at(math.exp(loglam), x)
        return loglam - math.log(target(N))

    lo = hi = math.log(lam)
    f_lo = f_hi = F(lo)
    step = 1.0
    for _ in range(60):
        if f_lo > 0:
            lo -= step
            f_lo = F(lo)
        elif f_hi < 0:
            hi += step
            f_hi = F(hi)
        if f_lo <= 0 <= f_hi:
            break
        step *= 2
    else:
        raise SearchError("could not bracket the norm multiplier")
    root = optimize.brentq(F, lo, hi, xtol=1e-13, rtol=1e-13)
    xr, _ = solve_at(math.exp(root), x)
    return xr
