"""Scalar barrier pieces and the separable objectives built from them.

``phi(x) = -log(1 - x) - x`` is the Bregman divergence of ``-log(1 - x)`` from
zero.  ``phitilde`` replaces it outside ``[-eps, eps]`` by its second-order
Taylor expansion at ``+-eps``, which keeps ``1/2 <= phitilde'' <= 2`` for the
default ``eps = 1/10``.

Objectives over an edge flow ``f`` given residual capacities ``c+ = u+ - f0``
and ``c- = u- + f0``:

* ``V``: weighted log barrier of the capacity constraints;
* ``Dtilde``: ``sum w+ phitilde(f/c+) + w- phitilde(-f/c-)``;
* ``val`` / ``tval``: energy or ``Dtilde`` plus ``W * ||v||_p`` where ``v_e``
  is the per-edge budget term, approximately ``f_e^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError
from .graph import Graph
from .laplacian import LaplacianFactor, project_to_circulation

EPSILON = 0.1
VAL_GUARD = 1.0 - 1e-12


# -- scalar pieces -----------------------------------------------------------

def phi(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x >= 1):
        raise DomainError("phi is defined only for x < 1")
    return -np.log1p(-x) - x


def phi_d1(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x >= 1):
        raise DomainError("phi is defined only for x < 1")
    return x / (1.0 - x)


def phi_d2(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x >= 1):
        raise DomainError("phi is defined only for x < 1")
    return 1.0 / (1.0 - x) ** 2


def _check_eps(epsilon):
    if not 0 < epsilon < 1:
        raise ContractError("epsilon must lie in (0, 1)")


def phitilde_all(x, epsilon: float = EPSILON):
    """Value, first and second derivative of the quadratic extension of ``phi``."""
    _check_eps(epsilon)
    x = np.asarray(x, dtype=np.float64)
    inner = np.minimum(np.maximum(x, -epsilon), epsilon)
    d = x - inner
    one_minus = 1.0 - inner
    v0 = -np.log1p(-inner) - inner
    v1 = inner / one_minus
    v2 = 1.0 / one_minus ** 2
    return v0 + v1 * d + 0.5 * v2 * d * d, v1 + v2 * d, v2


def phitilde(x, epsilon: float = EPSILON):
    return phitilde_all(x, epsilon)[0]


def phitilde_d1(x, epsilon: float = EPSILON):
    return phitilde_all(x, epsilon)[1]


def phitilde_d2(x, epsilon: float = EPSILON):
    return phitilde_all(x, epsilon)[2]


def log_tilde(x, epsilon: float = EPSILON):
    """Quadratic extension of ``log(1 + x)`` outside ``|x| <= epsilon``."""
    _check_eps(epsilon)
    x = np.asarray(x, dtype=np.float64)
    inner = np.clip(x, -epsilon, epsilon)
    d = x - inner
    return np.log1p(inner) + d / (1.0 + inner) - d * d / (2.0 * (1.0 + inner) ** 2)


def log_tilde_d1(x, epsilon: float = EPSILON):
    _check_eps(epsilon)
    x = np.asarray(x, dtype=np.float64)
    inner = np.clip(x, -epsilon, epsilon)
    return 1.0 / (1.0 + inner) - (x - inner) / (1.0 + inner) ** 2


def log_tilde_d2(x, epsilon: float = EPSILON):
    _check_eps(epsilon)
    x = np.asarray(x, dtype=np.float64)
    inner = np.clip(x, -epsilon, epsilon)
    return -1.0 / (1.0 + inner) ** 2


# -- data carriers -----------------------------------------------------------

@dataclass(frozen=True)
class Weights:
    w_up: np.ndarray
    w_down: np.ndarray

    def __post_init__(self):
        up = np.asarray(self.w_up, dtype=np.float64)
        down = np.asarray(self.w_down, dtype=np.float64)
        if up.shape != down.shape:
            raise DimensionError("weight vectors differ in length")
        object.__setattr__(self, "w_up", up)
        object.__setattr__(self, "w_down", down)

    @classmethod
    def ones(cls, m: int) -> "Weights":
        return cls(np.ones(m), np.ones(m))

    @property
    def l1(self) -> float:
        return float(self.w_up.sum() + self.w_down.sum())

    def valid(self) -> bool:
        return bool(np.all(self.w_up >= 1) and np.all(self.w_down >= 1))

    def __add__(self, other: "Weights") -> "Weights":
        return Weights(self.w_up + other.w_up, self.w_down + other.w_down)


@dataclass(frozen=True)
class ResidualCaps:
    c_up: np.ndarray
    c_down: np.ndarray

    @classmethod
    def at(cls, G: Graph, f) -> "ResidualCaps":
        f = np.asarray(f, dtype=np.float64)
        return cls(G.cap_up - f, G.cap_down + f)

    @property
    def c(self) -> np.ndarray:
        return np.minimum(self.c_up, self.c_down)

    @property
    def flipped(self) -> np.ndarray:
        """Edges whose orientation is reversed so that ``c+ <= c-`` holds."""
        return self.c_up > self.c_down

    def check_positive(self):
        if np.any(self.c_up <= 0) or np.any(self.c_down <= 0):
            raise DomainError("residual capacities must be positive")


def default_p(m: int) -> int:
    """``2 * ceil(sqrt(log m))`` clamped to ``[4, 32]``."""
    base = 2 * math.ceil(math.sqrt(math.log(max(m, 2))))
    return int(min(max(base, 4), 32))


@dataclass(frozen=True)
class ObjectiveParams:
    epsilon: float = EPSILON
    p: int = 4
    W: float = 1.0
    eta: float = 0.0

    def __post_init__(self):
        _check_eps(self.epsilon)
        if self.p < 2 or self.p % 2:
            raise ContractError("p must be an even integer >= 2")
        if not self.W > 0:
            raise ContractError("W must be positive")

    @classmethod
    def for_graph(cls, m: int, eta: float, epsilon: float = EPSILON, p: int | None = None):
        return cls(epsilon=epsilon, p=default_p(m) if p is None else p, W=float(m) ** (6 * eta), eta=eta)


# -- barrier V -----------------------------------------------------------------

def _interior(G: Graph, f):
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (G.m,):
        raise DimensionError(f"flow has shape {f.shape}, expected ({G.m},)")
    cu = G.cap_up - f
    cd = G.cap_down + f
    if np.any(cu <= 0) or np.any(cd <= 0):
        raise DomainError("flow is not strictly feasible")
    return cu, cd


def barrier_V(G: Graph, w: Weights, f) -> float:
    cu, cd = _interior(G, f)
    return float(-(w.w_up @ np.log(cu) + w.w_down @ np.log(cd)))


def grad_V(G: Graph, w: Weights, f) -> np.ndarray:
    cu, cd = _interior(G, f)
    return w.w_up / cu - w.w_down / cd


def hess_V(G: Graph, w: Weights, f) -> np.ndarray:
    """Diagonal of the barrier Hessian."""
    cu, cd = _interior(G, f)
    return w.w_up / cu ** 2 + w.w_down / cd ** 2


def centrality_residual(G: Graph, w: Weights, f, t: float | None = None, a: int | None = None,
                        b: int | None = None, factor: LaplacianFactor | None = None,
                        tol: float = 1e-12) -> float:
    """Distance of ``grad V(f)`` from ``im B``, relative to ``max(1, ||grad V||)``.

    Zero exactly on the weighted central path.  When ``t, a, b`` are given the
    flow must also route ``t * chi_ab``.
    """
    g = grad_V(G, w, f)
    if t is not None:
        from .graph import apply_incidence_transpose
        dem = apply_incidence_transpose(G, f)
        target = t * G.chi(a, b)
        if np.linalg.norm(dem - target) > 1e-6 * (1 + abs(t)):
            raise DomainError("flow does not route t * chi")
    pg = project_to_circulation(G, g, tol=tol, factor=factor)
    return float(np.linalg.norm(pg) / max(1.0, np.linalg.norm(g)))


# -- divergence objectives ---------------------------------------------------

def divergence_tilde(G: Graph, w: Weights, caps: ResidualCaps, f, epsilon: float = EPSILON):
    """``Dtilde`` with gradient and Hessian diagonal."""
    caps.check_positive()
    f = np.asarray(f, dtype=np.float64)
    xu = f / caps.c_up
    xd = -f / caps.c_down
    pu, pu1, pu2 = phitilde_all(xu, epsilon)
    pd, pd1, pd2 = phitilde_all(xd, epsilon)
    value = float(w.w_up @ pu + w.w_down @ pd)
    grad = w.w_up / caps.c_up * pu1 - w.w_down / caps.c_down * pd1
    hess = w.w_up / caps.c_up ** 2 * pu2 + w.w_down / caps.c_down ** 2 * pd2
    return value, grad, hess


def curvature_scale(w: Weights, caps: ResidualCaps) -> np.ndarray:
    """``a_e = w+/(c+)^2 + w-/(c-)^2``, the Hessian of ``Dtilde`` at zero."""
    return w.w_up / caps.c_up ** 2 + w.w_down / caps.c_down ** 2


def _pieces(f, caps: ResidualCaps, extended: bool, epsilon: float):
    """Per-edge ``v_e`` (with derivatives) in the ``c+ <= c-`` normalization."""
    f = np.asarray(f, dtype=np.float64)
    s = np.where(caps.flipped, -1.0, 1.0)
    cs = np.minimum(caps.c_up, caps.c_down)
    cl = np.maximum(caps.c_up, caps.c_down)
    xs = s * f / cs
    xl = -s * f / cl
    if extended:
        a0, a1, a2 = phitilde_all(xs, epsilon)
        b0, b1, b2 = phitilde_all(xl, epsilon)
    else:
        if np.any(np.abs(f) >= VAL_GUARD * cs):
            raise DomainError("val requires |f_e| < c_e")
        a0, a1, a2 = phi(xs), phi_d1(xs), phi_d2(xs)
        b0, b1, b2 = phi(xl), phi_d1(xl), phi_d2(xl)
    v = cs * cs * a0 + cs * cl * b0
    v1 = s * cs * (a1 - b1)
    v2 = a2 + cs / cl * b2
    return v, v1, v2


def lp_norm(v, p: int) -> float:
    """``||v||_p`` with max-factoring so large ``p`` cannot overflow."""
    v = np.abs(np.asarray(v, dtype=np.float64))
    if v.size == 0:
        return 0.0
    vmax = v.max()
    if vmax == 0:
        return 0.0
    return float(vmax * np.sum((v / vmax) ** p) ** (1.0 / p))


@dataclass
class ValEvaluation:
    value: float
    grad: np.ndarray
    hess_diag: np.ndarray
    rank_one: np.ndarray
    rank_one_coef: float
    v: np.ndarray
    norm: float

    def hessian(self) -> np.ndarray:
        """Dense Hessian ``diag(hess_diag) - coef * u u^T`` (small instances only)."""
        return np.diag(self.hess_diag) - self.rank_one_coef * np.outer(self.rank_one, self.rank_one)


def evaluate_val(G: Graph, w: Weights, caps: ResidualCaps, params: ObjectiveParams, f,
                 extended: bool = True) -> ValEvaluation:
    """``tval`` (``extended=True``) or ``val`` with gradient and structured Hessian."""
    caps.check_positive()
    f = np.asarray(f, dtype=np.float64)
    p, W, eps = params.p, params.W, params.epsilon
    if extended:
        q0, q1, q2 = divergence_tilde(G, w, caps, f, eps)
    else:
        if np.any(np.abs(f) >= VAL_GUARD * caps.c):
            raise DomainError("val requires |f_e| < c_e")
        xu, xd = f / caps.c_up, -f / caps.c_down
        q0 = float(w.w_up @ phi(xu) + w.w_down @ phi(xd))
        q1 = w.w_up / caps.c_up * phi_d1(xu) - w.w_down / caps.c_down * phi_d1(xd)
        q2 = w.w_up / caps.c_up ** 2 * phi_d2(xu) + w.w_down / caps.c_down ** 2 * phi_d2(xd)
    v, v1, v2 = _pieces(f, caps, extended, eps)
    N = lp_norm(v, p)
    if N > 0:
        rho = v / N
        u = rho ** (p - 1) * v1
        grad = q1 + W * u
        hd = q2 + W * ((p - 1) * rho ** (p - 2) * v1 * v1 / N + rho ** (p - 1) * v2)
        coef = W * (p - 1) / N
    else:
        u = np.zeros_like(v)
        grad = q1.copy()
        hd = q2.copy()
        coef = 0.0
    return ValEvaluation(q0 + W * N, grad, hd, u, coef, v, N)


def val_objectives(G: Graph, w: Weights, caps: ResidualCaps, params: ObjectiveParams, f):
    """Return ``(val, tval, grad_val, grad_tval, v)``; ``v`` is the extended budget vector."""
    if params.p % 2:
        raise ContractError("p must be even")
    ext = evaluate_val(G, w, caps, params, f, extended=True)
    plain = evaluate_val(G, w, caps, params, f, extended=False)
    return plain.value, ext.value, plain.grad, ext.grad, ext.v


def tval_value(G: Graph, w: Weights, caps: ResidualCaps, params: ObjectiveParams, f) -> float:
    """Value of ``tval`` only (cheap path for line searches)."""
    f = np.asarray(f, dtype=np.float64)
    eps = params.epsilon
    pu = phitilde_all(f / caps.c_up, eps)[0]
    pd = phitilde_all(-f / caps.c_down, eps)[0]
    v, _, _ = _pieces(f, caps, True, eps)
    return float(w.w_up @ pu + w.w_down @ pd + params.W * lp_norm(v, params.p))
