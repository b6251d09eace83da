"""One central-path advance (the Augment step) with its invariant checks.

A :class:`CentralPathState` holds a point ``f`` on the weighted central path
for path parameter ``t``.  :func:`augment` computes the step flow ``fhat``
(the minimizer of ``tval`` over ``delta * chi``-flows) and the reduced weight
change ``nu``; applying both and calling :func:`recenter` yields the central
point for ``(t + delta, w + nu)``.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .barrier import (
    EPSILON,
    ObjectiveParams,
    ResidualCaps,
    Weights,
    curvature_scale,
    default_p,
    divergence_tilde,
    evaluate_val,
    grad_V,
    hess_V,
    lp_norm,
    tval_value,
)
from .errors import ContractError, ConvergenceError, DomainError, RecenterError, StepRejected
from .graph import Graph, apply_incidence_transpose
from .laplacian import LaplacianFactor, electric_flow, project_to_circulation, route_drift
from .refinement import (
    RefinementProblem,
    SeparableConvexPiece,
    _newton_direction,
    solve_lp_norm,
)

PAPER_DELTA_CONST = 1e5
CONGESTION_LIMIT = 1.0 / 20
DIVERGENCE_CONST = 5e-7
ABS_STEP_CONST = 1.0 / 500
CHECK_SLACK = 1.01
ETA_C0 = 1.0


def compute_eta(m: int, U: float, c0: float = ETA_C0) -> float:
    """``max(0, 1/6 - log_m(U)/3 - c0/ln m)``."""
    if m < 2:
        return 0.0
    lm = math.log(m)
    return max(0.0, 1.0 / 6 - math.log(max(U, 1.0)) / (3 * lm) - c0 / lm)


_UNIT_FACTORS: "weakref.WeakKeyDictionary[Graph, LaplacianFactor]" = weakref.WeakKeyDictionary()


def unit_factor(G: Graph) -> LaplacianFactor:
    fac = _UNIT_FACTORS.get(G)
    if fac is None:
        fac = LaplacianFactor(G, np.ones(G.m))
        _UNIT_FACTORS[G] = fac
    return fac


# -- state and results ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CentralPathState:
    G: Graph
    a: int
    b: int
    w: Weights
    f: np.ndarray
    t: float
    t_star: float
    eta: float = 0.0
    p: int | None = None
    delta_const: float = PAPER_DELTA_CONST
    epsilon: float = EPSILON

    @classmethod
    def initial(cls, G: Graph, a: int, b: int, t_star: float, eta: float | None = None,
                U: float | None = None, **kw) -> "CentralPathState":
        """``w = 1``, ``t = 0``, ``f = 0``; central for any preconditioned graph."""
        if eta is None:
            eta = compute_eta(G.m, G.U if U is None else U)
        return cls(G, a, b, Weights.ones(G.m), np.zeros(G.m), 0.0, float(t_star), eta, **kw)

    @property
    def m(self) -> int:
        return self.G.m

    @property
    def F(self) -> float:
        return self.t_star - self.t

    @property
    def W(self) -> float:
        return float(self.m) ** (6 * self.eta)

    @property
    def params(self) -> ObjectiveParams:
        p = default_p(self.m) if self.p is None else self.p
        return ObjectiveParams(self.epsilon, p, self.W, self.eta)

    @property
    def threshold(self) -> float:
        """Loop guard ``m^{1/2 - eta}``: below this residual flow we round."""
        return float(self.m) ** (0.5 - self.eta)

    @property
    def paper_delta(self) -> float:
        return self.F / (self.delta_const * self.threshold)

    @property
    def caps(self) -> ResidualCaps:
        return ResidualCaps.at(self.G, self.f)

    def chi(self) -> np.ndarray:
        return self.G.chi(self.a, self.b)


@dataclass
class StepDiagnostics:
    step: int = 0
    t: float = 0.0
    F: float = 0.0
    delta: float = 0.0
    divergence: float = 0.0
    congestion: float = 0.0
    max_abs_step: float = 0.0
    mu_l1: float = 0.0
    nu_l1: float = 0.0
    w_l1_before: float = 0.0
    w_l1_after: float = 0.0
    residual: float = 0.0
    newton_iters: int = 0
    recenter_iters: int = 0
    precond_ratio: float = math.inf
    checks: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=float)


@dataclass
class AugmentResult:
    delta: float
    f_hat: np.ndarray
    nu: Weights
    mu: Weights
    diagnostics: StepDiagnostics


# -- step flow -----------------------------------------------------------------

def _project_step(G: Graph, hdiag, grad, u, coef):
    return _newton_direction(G, grad, hdiag, u, coef)


def solve_tval(state: CentralPathState, delta: float, x0=None, tol: float = 1e-13, max_iter: int = 100):
    """Minimize ``tval`` over ``delta * chi``-flows by damped Newton.

    Returns ``(fhat, iterations)``.  The Hessian is diagonal minus rank one,
    so each direction costs two Laplacian solves with a shared factor.
    """
    G = state.G
    caps = state.caps
    params = state.params
    w = state.w
    target = delta * state.chi()
    if x0 is None:
        x = electric_flow(G, curvature_scale(w, caps), target, tol=1e-12)
    else:
        x = np.asarray(x0, dtype=np.float64).copy()
        drift = target - apply_incidence_transpose(G, x)
        if np.any(np.abs(drift) > 1e-14 * (1 + abs(delta))):
            x = x + route_drift(G, drift, tol=1e-12)
    fx = tval_value(G, w, caps, params, x)
    it = stalled = 0
    for it in range(1, max_iter + 1):
        ev = evaluate_val(G, w, caps, params, x)
        step = _project_step(G, ev.hess_diag, ev.grad, ev.rank_one, ev.rank_one_coef)
        dec = -float(ev.grad @ step)
        if dec <= tol * max(fx, 1e-300) or dec <= 1e-300:
            break
        alpha = 1.0
        while True:
            xn = x + alpha * step
            fn = tval_value(G, w, caps, params, xn)
            if fn <= fx - 1e-4 * alpha * dec or alpha < 1e-10:
                break
            if alpha == 1.0 and dec <= 1e-9 * abs(fx):
                # a full Newton step this close to the optimum only fails through round-off
                alpha = 0.0
                break
            alpha *= 0.5
        if alpha < 1e-10:
            break
        # decrement below the round-off level of the objective: converged
        stalled = stalled + 1 if fx - fn <= 1e-14 * abs(fx) else 0
        x, fx = xn, fn
        if stalled >= 2:
            break
    else:
        raise ConvergenceError("step-flow Newton hit its iteration cap", best=x)
    return x, it


def solve_tval_refinement(state: CentralPathState, delta: float, tol: float = 1e-10):
    """Minimize ``tval`` through the refinement chain (slow; small graphs only).

    The ``Dtilde`` part is the q-piece and ``v`` the h-piece of a norm-form
    refinement problem whose weight ``W`` is folded into ``h``.
    """
    G = state.G
    caps = state.caps
    params = state.params
    w = state.w
    eps = params.epsilon
    W = params.W
    from .barrier import _pieces, phitilde_all

    def qv(x):
        pu = phitilde_all(x / caps.c_up, eps)
        pd = phitilde_all(-x / caps.c_down, eps)
        return (w.w_up * pu[0] + w.w_down * pd[0],
                w.w_up / caps.c_up * pu[1] - w.w_down / caps.c_down * pd[1],
                w.w_up / caps.c_up ** 2 * pu[2] + w.w_down / caps.c_down ** 2 * pd[2])

    q = SeparableConvexPiece(lambda x: qv(x)[0], lambda x: qv(x)[1], lambda x: qv(x)[2],
                             curvature_scale(w, caps) / 2, "q")
    h = SeparableConvexPiece(lambda x: W * _pieces(x, caps, True, eps)[0],
                             lambda x: W * _pieces(x, caps, True, eps)[1],
                             lambda x: W * _pieces(x, caps, True, eps)[2],
                             W * np.ones(G.m), "h")
    prob = RefinementProblem(G, delta * state.chi(), q, h, params.p)
    return solve_lp_norm(prob, tol=tol), 0


# -- augment ---------------------------------------------------------------------

def weight_changes(caps: ResidualCaps, f_hat, v, p: int, W: float):
    """Preliminary change ``mu`` and reduced change ``nu`` for a step flow."""
    N = lp_norm(v, p)
    if N > 0:
        rho = (np.asarray(v) / N) ** (p - 1)
    else:
        rho = np.zeros_like(f_hat)
    c = caps.c
    mu = Weights(W * c * caps.c_up * rho, W * c * caps.c_down * rho)
    slack_up = caps.c_up - f_hat
    slack_down = caps.c_down + f_hat
    gap = mu.w_up / slack_up - mu.w_down / slack_down
    nu_up = np.where(gap >= 0, slack_up * gap, 0.0)
    nu_down = np.where(gap >= 0, 0.0, -slack_down * gap)
    return mu, Weights(nu_up, nu_down)


def augment(state: CentralPathState, delta: float | None = None, solver: str = "newton",
            x0=None, tol: float = 1e-13, raise_on_congestion: bool = True) -> AugmentResult:
    """One Augment step from a central state; mutates nothing."""
    if delta is None:
        delta = state.paper_delta
    if not delta > 0:
        raise ContractError("step size must be positive")
    caps = state.caps
    caps.check_positive()
    params = state.params
    if solver == "newton":
        f_hat, iters = solve_tval(state, delta, x0=x0, tol=tol)
    elif solver == "refinement":
        f_hat, iters = solve_tval_refinement(state, delta)
    else:
        raise ContractError(f"unknown step solver {solver!r}")
    ev = evaluate_val(state.G, state.w, caps, params, f_hat)
    mu, nu = weight_changes(caps, f_hat, ev.v, params.p, params.W)
    div = divergence_tilde(state.G, state.w, caps, f_hat, params.epsilon)[0]
    c = caps.c
    diag = StepDiagnostics(
        t=state.t, F=state.F, delta=delta, divergence=div,
        congestion=float(np.max(np.abs(f_hat) / c)) if state.m else 0.0,
        max_abs_step=float(np.max(np.abs(f_hat))) if state.m else 0.0,
        mu_l1=mu.l1, nu_l1=nu.l1, w_l1_before=state.w.l1, w_l1_after=state.w.l1 + nu.l1,
        newton_iters=iters,
    )
    if state.G.preconditioned and len(state.G.precond_edge_ids):
        pe = state.G.precond_edge_ids
        diag.precond_ratio = float(np.min(c[pe]) / (state.F / (21 * state.m))) if state.F > 0 else math.inf
    res = AugmentResult(delta, f_hat, nu, mu, diag)
    if raise_on_congestion and diag.congestion > CONGESTION_LIMIT:
        raise StepRejected(f"congestion {diag.congestion:.3g} exceeds 1/20", diagnostics=diag)
    return res


def check_step_invariants(state: CentralPathState, result: AugmentResult, slack: float = CHECK_SLACK) -> dict:
    """Evaluate the per-step inequalities; returns ``{name: (ok, margin)}``.

    ``margin`` is ``bound / measured`` (``inf`` when the measured side is 0),
    so values at least 1 mean the inequality holds.
    """
    m, eta = state.m, state.eta
    caps = state.caps
    c = caps.c
    fh = result.f_hat
    mu, nu = result.mu, result.nu
    out = {}

    def record(name, measured, bound):
        margin = math.inf if measured <= 0 else bound / measured
        out[name] = (bool(measured <= bound * slack), float(margin))

    record("divergence", result.diagnostics.divergence, DIVERGENCE_CONST * m ** (2 * eta))
    record("dual_bound", float(np.max(np.abs(fh) / c ** 2)) if m else 0.0, m ** (2 * eta))
    record("congestion", result.diagnostics.congestion, CONGESTION_LIMIT)
    record("abs_step", result.diagnostics.max_abs_step, ABS_STEP_CONST * m ** (-2 * eta))
    record("mu_l1", mu.l1, m / 2)
    record("weights_boundary", state.w.l1 + nu.l1, 2.5 * m)
    nonneg = bool(np.all(nu.w_up >= 0) and np.all(nu.w_down >= 0))
    out["nu_nonnegative"] = (nonneg, 1.0 if nonneg else 0.0)
    compl = bool(np.all(nu.w_up * nu.w_down == 0))
    out["nu_complementary"] = (compl, 1.0 if compl else 0.0)
    lhs, rhs = mu.w_up / caps.c_up, mu.w_down / caps.c_down
    neutral_err = float(np.max(np.abs(lhs - rhs) / np.maximum(1e-300, np.maximum(np.abs(lhs), np.abs(rhs))))) if m else 0.0
    out["mu_neutral"] = (neutral_err <= 1e-12, math.inf if neutral_err == 0 else 1e-12 / neutral_err)
    if state.G.preconditioned and len(state.G.precond_edge_ids) and state.F > 0:
        pe = state.G.precond_edge_ids
        cmin = float(np.min(c[pe]))
        out["precond_general"] = (cmin * slack >= state.F / (7 * state.w.l1), cmin * 7 * state.w.l1 / state.F)
        if state.w.l1 <= 3 * m:
            out["precond_3m"] = (cmin * slack >= state.F / (21 * m), cmin * 21 * m / state.F)
    return out


# -- recentering ---------------------------------------------------------------------

@dataclass
class RecenterReport:
    iterations: int
    residual: float
    values: list


def _residual(G, w, f, factor):
    g = grad_V(G, w, f)
    pg = project_to_circulation(G, g, tol=1e-13, factor=factor)
    return float(np.linalg.norm(pg) / max(1.0, np.linalg.norm(g)))


def recenter(state: CentralPathState, tol: float = 1e-10, max_iter: int = 60,
             report: RecenterReport | None = None) -> CentralPathState:
    """Damped Newton on the barrier over ``t * chi``-flows until central."""
    G, w = state.G, state.w
    factor = unit_factor(G) if G.m else None
    f = np.asarray(state.f, dtype=np.float64).copy()
    target = state.t * state.chi()
    drift = target - apply_incidence_transpose(G, f)
    if G.m and np.any(np.abs(drift) > 1e-13 * (1 + abs(state.t))):
        f = f + route_drift(G, drift, tol=1e-13)
    if G.m == 0:
        return state
    res = _residual(G, w, f, factor)
    rep = report if report is not None else RecenterReport(0, res, [])

    def V(x):
        cu, cd = G.cap_up - x, G.cap_down + x
        if np.any(cu <= 0) or np.any(cd <= 0):
            return math.inf
        return float(-(w.w_up @ np.log(cu) + w.w_down @ np.log(cd)))

    fv = V(f)
    rep.values.append(fv)
    worse = stalled = 0
    best = res
    it = 0
    while res > tol:
        if it >= max_iter:
            raise RecenterError("recentering hit its iteration cap", best=f, residual=res)
        it += 1
        g = grad_V(G, w, f)
        step = _newton_direction(G, g, hess_V(G, w, f))
        dec = -float(g @ step)
        alpha = 1.0
        while True:
            fn_ = f + alpha * step
            vn = V(fn_)
            if vn <= fv - 1e-4 * alpha * dec or alpha < 1e-12:
                break
            alpha *= 0.5
        if alpha < 1e-12 or not vn <= fv:
            # value cannot decrease further in floating point
            break
        f, fv = fn_, vn
        rep.values.append(fv)
        new_res = _residual(G, w, f, factor)
        worse = worse + 1 if new_res > res else 0
        if worse >= 5:
            raise RecenterError("recentering diverged", best=f, residual=new_res)
        stalled = stalled + 1 if new_res > 0.5 * best else 0
        best = min(best, new_res)
        res = new_res
        if stalled >= 3:
            # residual sits at the floating-point floor
            break
    rep.iterations = it
    rep.residual = res
    if res > max(tol, 1e-6):
        raise RecenterError("recentering stalled above tolerance", best=f, residual=res)
    return replace(state, f=f)


def apply_step(state: CentralPathState, result: AugmentResult) -> CentralPathState:
    """State for ``(t + delta, w + nu)`` before recentering."""
    f = state.f + result.f_hat
    caps = ResidualCaps.at(state.G, f)
    if np.any(caps.c_up <= 0) or np.any(caps.c_down <= 0):
        raise DomainError("step leaves the feasible region")
    return replace(state, f=f, t=state.t + result.delta, w=state.w + result.nu)


def trace_lines(diags) -> str:
    """JSON-lines serialization of step diagnostics."""
    return "".join(d.to_json() + "\n" for d in diags)
