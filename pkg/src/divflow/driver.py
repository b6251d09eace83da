"""Outer maximum-flow loop: central-path advance, rounding and finishing.

``maxflow_ipm`` reduces the input to an undirected instance, preconditions
it, advances along the weighted central path until the residual flow drops
below ``m^{1/2 - eta}``, rounds the fractional flow to an integral one and
finishes with augmenting paths.  ``reference_maxflow`` (Dinic) is an
independent exact solver used for verification.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AlgorithmFailure,
    ContractError,
    ConvergenceError,
    DomainError,
    StepRejected,
)
from .graph import Graph, flow_value, precondition, reduce_directed_to_undirected
from .ipm import (
    CONGESTION_LIMIT,
    PAPER_DELTA_CONST,
    CentralPathState,
    RecenterReport,
    apply_step,
    augment,
    check_step_invariants,
    compute_eta,
    recenter,
)

SCHEMA = "divflow/1"
VERIFY_MAX_M = 10_000


@dataclass
class RunConfig:
    delta_profile: str = "adaptive"
    eta: float | None = None
    p: int | None = None
    delta_const: float = PAPER_DELTA_CONST
    kappa0: float = 0.1
    kappa_floor: float = 1e-5
    center_tol: float = 1e-10
    step_tol: float = 1e-13
    max_steps: int = 10_000_000
    check_level: str = "record"
    solver: str = "newton"
    verify: bool | None = None
    trace: object = None
    keep_diagnostics: bool = False

    def __post_init__(self):
        if self.delta_profile not in ("adaptive", "paper"):
            raise ContractError("delta_profile must be 'adaptive' or 'paper'")
        if self.check_level not in ("off", "assert", "record"):
            raise ContractError("check_level must be off, assert or record")
        if not (self.center_tol > 0 and self.step_tol > 0 and self.kappa0 > 0 and self.kappa_floor > 0):
            raise ContractError("tolerances must be positive")
        if self.max_steps < 1:
            raise ContractError("max_steps must be at least 1")


@dataclass
class CheckTally:
    count: int = 0
    violations: int = 0
    min_margin: float = math.inf

    def add(self, ok: bool, margin: float):
        self.count += 1
        self.violations += 0 if ok else 1
        self.min_margin = min(self.min_margin, margin)

    def as_dict(self):
        margin = self.min_margin if math.isfinite(self.min_margin) else None
        return {"pass": self.violations == 0, "count": self.count,
                "violations": self.violations, "min_margin": margin}


@dataclass
class PathContext:
    """Mutable bookkeeping shared across probes of one run."""

    config: RunConfig
    kappa: float = 0.1
    steps: int = 0
    rejections: int = 0
    newton_iters: int = 0
    hi_cert: float = math.inf
    prev: object = None
    checks: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    F_ratios: list = field(default_factory=list)

    def tally(self, name, ok, margin):
        self.checks.setdefault(name, CheckTally()).add(ok, margin)


@dataclass
class RunReport:
    value: int
    flow: np.ndarray
    graph: Graph
    n: int
    m: int
    U: float
    eta: float
    steps: int
    probes: int
    oracle_calls: int
    rejections: int
    phases: dict
    checks: dict
    augmentations: int = 0
    verified: bool | None = None
    reference_value: int | None = None
    diagnostics: list = field(default_factory=list)

    def to_dict(self, timings: bool = False) -> dict:
        phases = {k: (round(v, 3) if timings else None) for k, v in self.phases.items()}
        return {
            "schema": SCHEMA,
            "value": int(self.value),
            "n": int(self.n),
            "m": int(self.m),
            "U": float(self.U),
            "eta": float(self.eta),
            "steps": int(self.steps),
            "probes": int(self.probes),
            "oracle_calls": int(self.oracle_calls),
            "rejections": int(self.rejections),
            "augmentations": int(self.augmentations),
            "verified": self.verified,
            "phases": phases,
            "checks": {k: self.checks[k] for k in sorted(self.checks)},
        }

    def to_json(self, timings: bool = False) -> str:
        return json.dumps(self.to_dict(timings), sort_keys=True)


# -- central path driver --------------------------------------------------------

def _precond_upper_bound(state: CentralPathState) -> float:
    """Upper bound on the optimum certified by the preconditioning edges."""
    pe = state.G.precond_edge_ids
    if not len(pe):
        return math.inf
    c = state.caps.c[pe]
    return state.t + 7.0 * state.w.l1 * float(c.min()) * (1 + 1e-9) + 1e-9


def advance(state: CentralPathState, ctx: PathContext, use_certificate: bool = True):
    """Step until ``F_t < m^{1/2 - eta}``; returns ``(state, ok, reason)``.

    On failure the returned state is the last central point reached, which
    remains a valid starting point for a smaller target.
    """
    cfg = ctx.config
    while state.F >= state.threshold:
        if ctx.steps >= cfg.max_steps:
            return state, False, "step cap"
        if use_certificate:
            ctx.hi_cert = min(ctx.hi_cert, math.floor(_precond_upper_bound(state)))
            if ctx.hi_cert < state.t_star:
                return state, False, "guess exceeds certified bound"
        if cfg.delta_profile == "paper":
            delta = state.paper_delta
        else:
            delta = min(ctx.kappa * state.F / state.threshold, state.F / 2)
        x0 = None
        if ctx.prev is not None and ctx.prev.f_hat.shape == state.f.shape:
            x0 = ctx.prev.f_hat * (delta / ctx.prev.delta)
        rep = RecenterReport(0, 0.0, [])
        try:
            res = augment(state, delta, solver=cfg.solver, x0=x0, tol=cfg.step_tol)
            new = recenter(apply_step(state, res), tol=cfg.center_tol, report=rep)
        except (StepRejected, ConvergenceError, DomainError) as exc:
            ctx.rejections += 1
            if cfg.delta_profile == "paper":
                raise AlgorithmFailure(f"fixed-profile step rejected: {exc}") from exc
            cong = getattr(getattr(exc, "diagnostics", None), "congestion", None)
            shrink = 0.5
            if cong:
                shrink = min(0.5, 0.8 * CONGESTION_LIMIT / cong)
            ctx.kappa *= shrink
            ctx.prev = None
            if ctx.kappa < cfg.kappa_floor:
                return state, False, "step size fell below the floor"
            continue
        diag = res.diagnostics
        diag.step = ctx.steps
        diag.residual = rep.residual
        diag.recenter_iters = rep.iterations
        ctx.newton_iters += diag.newton_iters
        if cfg.check_level != "off":
            checks = check_step_invariants(state, res)
            diag.checks = {k: {"ok": v[0], "margin": v[1]} for k, v in checks.items()}
            for k, (ok, margin) in checks.items():
                ctx.tally(k, ok, margin)
            ctx.tally("centrality", rep.residual <= 1e-6, 1e-6 / max(rep.residual, 1e-300))
            if cfg.check_level == "assert":
                bad = [k for k, (ok, _) in checks.items() if not ok]
                if bad:
                    raise AlgorithmFailure(f"step invariants violated: {', '.join(sorted(bad))}")
        if cfg.trace is not None:
            cfg.trace.write(diag.to_json() + "\n")
        if cfg.keep_diagnostics:
            ctx.diagnostics.append(diag)
        ctx.F_ratios.append((state.F, new.F))
        ctx.steps += 1
        ctx.prev = res
        state = new
        if cfg.delta_profile == "adaptive":
            grow = 2.0 if diag.congestion <= 0 else min(2.0, 0.8 * CONGESTION_LIMIT / diag.congestion)
            ctx.kappa *= max(grow, 0.5)
    return state, True, "threshold reached"


def run_central_path(G: Graph, a: int, b: int, t_star: float, config: RunConfig | None = None,
                     U: float | None = None):
    """Advance a fresh central path on a preconditioned graph toward ``t_star``."""
    cfg = config or RunConfig()
    if not G.preconditioned:
        raise ContractError("central path runs need a preconditioned graph")
    eta = cfg.eta if cfg.eta is not None else compute_eta(G.m, G.U / 2 if U is None else U)
    state = CentralPathState.initial(G, a, b, t_star, eta=eta, p=cfg.p, delta_const=cfg.delta_const)
    ctx = PathContext(cfg, kappa=cfg.kappa0)
    state, ok, reason = advance(state, ctx, use_certificate=False)
    return state, ctx, ok, reason


# -- rounding, augmenting paths, reference -------------------------------------------

def round_to_integral(G: Graph, f, a: int, b: int, tol: float = 1e-9) -> np.ndarray:
    """Round a feasible flow to an integral one without lowering its value.

    Repeatedly walks the subgraph of fractional edges.  A cycle is pushed so
    that its lowest-id edge increases, which keeps the value; only when the
    fractional support is an ``a-b`` path is flow pushed toward ``b``.  Each
    push makes at least one edge integral.
    """
    f = np.asarray(f, dtype=np.float64).copy()
    near = np.abs(f - np.round(f)) <= tol
    f[near] = np.round(f[near])
    adj: dict[int, set] = {}
    for e in np.flatnonzero(~near):
        e = int(e)
        adj.setdefault(int(G.tails[e]), set()).add(e)
        adj.setdefault(int(G.heads[e]), set()).add(e)

    def drop(e):
        for v in (int(G.tails[e]), int(G.heads[e])):
            s = adj.get(v)
            if s is not None:
                s.discard(e)
                if not s:
                    del adj[v]

    def walk(start):
        """Follow fractional edges from ``start``; a cycle or a dead-end vertex."""
        pos = {start: 0}
        edges: list[tuple[int, int]] = []
        v, last = start, -1
        while True:
            options = [e for e in adj.get(v, ()) if e != last]
            if not options:
                return edges, None, v
            e = min(options)
            s = 1 if int(G.tails[e]) == v else -1
            u = int(G.heads[e]) if s == 1 else int(G.tails[e])
            edges.append((e, s))
            if u in pos:
                return edges[pos[u]:], u, None
            pos[u] = len(edges)
            v, last = u, e

    guard = 0
    while adj:
        guard += 1
        if guard > 4 * G.m + 10:
            raise AlgorithmFailure("rounding did not terminate")
        edges, cyc, dead = walk(min(adj))
        if cyc is None:
            # interior vertices have fractional degree >= 2, so dead ends are a or b;
            # walking back from one finds a cycle or the whole a-b path
            edges, cyc, end = walk(dead)
            if cyc is None:
                if {dead, end} != {a, b}:
                    raise AlgorithmFailure("fractional walk reached a dead end")
                direction = 1 if dead == a else -1
        if cyc is not None:
            direction = min(edges)[1]
        theta = math.inf
        for e, s in edges:
            x = f[e]
            theta = min(theta, math.ceil(x) - x if s * direction > 0 else x - math.floor(x))
        for e, s in edges:
            f[e] += s * direction * theta
            if abs(f[e] - round(f[e])) <= tol:
                f[e] = round(f[e])
                drop(e)
    return f


def _residual_adjacency(G: Graph):
    out = [[] for _ in range(G.n)]
    for e in range(G.m):
        u, v = int(G.tails[e]), int(G.heads[e])
        out[u].append((e, 1, v))
        out[v].append((e, -1, u))
    return out


def _residual(G, f, e, s):
    return G.cap_up[e] - f[e] if s == 1 else G.cap_down[e] + f[e]


def augmenting_paths(G: Graph, f, a: int, b: int):
    """Shortest augmenting paths from an integral feasible flow; returns ``(flow, count)``."""
    f = np.asarray(f, dtype=np.float64).copy()
    if G.m and not G.is_feasible(f, tol=0.0):
        raise ContractError("starting flow is infeasible")
    adj = _residual_adjacency(G)
    count = 0
    while True:
        parent = {a: None}
        queue = deque([a])
        while queue and b not in parent:
            v = queue.popleft()
            for e, s, u in adj[v]:
                if u not in parent and _residual(G, f, e, s) > 0:
                    parent[u] = (v, e, s)
                    queue.append(u)
        if b not in parent:
            return f, count
        path = []
        v = b
        while parent[v] is not None:
            pv, e, s = parent[v]
            path.append((e, s))
            v = pv
        theta = min(_residual(G, f, e, s) for e, s in path)
        for e, s in path:
            f[e] += s * theta
        count += 1


def min_cut(G: Graph, f, a: int):
    """Vertices reachable from ``a`` in the residual graph and the capacity leaving them."""
    adj = _residual_adjacency(G)
    seen = {a}
    queue = deque([a])
    while queue:
        v = queue.popleft()
        for e, s, u in adj[v]:
            if u not in seen and _residual(G, f, e, s) > 0:
                seen.add(u)
                queue.append(u)
    side = np.zeros(G.n, dtype=bool)
    side[list(seen)] = True
    cap = float(G.cap_up[side[G.tails] & ~side[G.heads]].sum()
                + G.cap_down[side[G.heads] & ~side[G.tails]].sum())
    return side, cap


def reference_maxflow(G: Graph, a: int, b: int):
    """Dinic's algorithm on two-sided capacities; returns ``(value, flow)``."""
    if a == b:
        raise ContractError("source and sink must differ")
    n, m = G.n, G.m
    head = [[] for _ in range(n)]
    to = np.empty(2 * m, dtype=np.int64)
    cap = np.empty(2 * m, dtype=np.float64)
    for e in range(m):
        u, v = int(G.tails[e]), int(G.heads[e])
        to[2 * e], cap[2 * e] = v, G.cap_up[e]
        to[2 * e + 1], cap[2 * e + 1] = u, G.cap_down[e]
        head[u].append(2 * e)
        head[v].append(2 * e + 1)
    to = to.tolist()
    cap = cap.tolist()
    total = 0.0
    while True:
        level = [-1] * n
        level[a] = 0
        queue = deque([a])
        while queue:
            v = queue.popleft()
            for arc in head[v]:
                if cap[arc] > 0 and level[to[arc]] < 0:
                    level[to[arc]] = level[v] + 1
                    queue.append(to[arc])
        if level[b] < 0:
            break
        it = [0] * n
        while True:
            # iterative DFS for one blocking-flow path
            stack = [a]
            arcs = []
            while stack:
                v = stack[-1]
                if v == b:
                    break
                advanced = False
                while it[v] < len(head[v]):
                    arc = head[v][it[v]]
                    u = to[arc]
                    if cap[arc] > 0 and level[u] == level[v] + 1:
                        stack.append(u)
                        arcs.append(arc)
                        advanced = True
                        break
                    it[v] += 1
                if not advanced:
                    stack.pop()
                    if arcs:
                        arcs.pop()
                        it[stack[-1]] += 1
            if not stack:
                break
            theta = min(cap[arc] for arc in arcs)
            for arc in arcs:
                cap[arc] -= theta
                cap[arc ^ 1] += theta
            total += theta
    flow = np.array([G.cap_up[e] - cap[2 * e] for e in range(m)], dtype=np.float64)
    return total, flow


# -- top level ----------------------------------------------------------------

def _integral_scale(G: Graph) -> int:
    for s in (1, 2):
        caps = np.concatenate([G.cap_up, G.cap_down]) * s
        if np.all(caps == np.round(caps)):
            return s
    raise ContractError("capacities must be integers")


def binary_search_value(Gp: Graph, a: int, b: int, lo: int, hi: int, ctx: PathContext, eta: float):
    """Search the largest target the central path reaches; returns ``(state, probes)``.

    Every probe continues from the furthest central point found so far, since
    a central point for ``t`` serves any target up to ``t + m^{1/2-eta}``.
    """
    cfg = ctx.config
    base = CentralPathState.initial(Gp, a, b, lo, eta=eta, p=cfg.p, delta_const=cfg.delta_const)
    probes = 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        probes += 1
        state, ok, _ = advance(replace(base, t_star=float(mid)), ctx)
        if state.t >= base.t:
            base = state
        if ok:
            lo = mid
        else:
            hi = mid - 1
        hi = min(hi, int(ctx.hi_cert))
        lo = max(lo, math.ceil(base.t + base.threshold) - 1)
        lo = min(lo, hi)
    return base, probes


def maxflow_ipm(G: Graph, a: int, b: int, config: RunConfig | None = None) -> RunReport:
    """Exact maximum ``ab``-flow value via the central path, rounding and augmenting paths."""
    cfg = config or RunConfig()
    if not (0 <= a < G.n and 0 <= b < G.n) or a == b:
        raise ContractError("invalid source/sink pair")
    phases = {"ipm_ms": 0.0, "round_ms": 0.0, "ap_ms": 0.0}
    t0 = time.perf_counter()
    G_und, offset = reduce_directed_to_undirected(G, a, b)
    scale = _integral_scale(G_und)
    G_s = G_und.scaled(scale) if scale != 1 else G_und
    offset_s = round(offset * scale)
    ctx = PathContext(cfg, kappa=cfg.kappa0)
    probes = 0
    eta = 0.0
    if G_s.m == 0:
        Gp = G_s
        f = np.zeros(0)
        shift = 0
    else:
        Gp = precondition(G_s, a, b)
        U_s = G_s.U
        shift = int(round(2 * G_s.m * U_s))
        eta = cfg.eta if cfg.eta is not None else compute_eta(Gp.m, U_s)
        cut_a = G_s.cap_up[(G_s.tails == a)].sum() + G_s.cap_down[(G_s.heads == a)].sum()
        cut_b = G_s.cap_up[(G_s.heads == b)].sum() + G_s.cap_down[(G_s.tails == b)].sum()
        lo = shift
        hi = shift + int(min(G_s.m * U_s, cut_a, cut_b))
        state, probes = binary_search_value(Gp, a, b, lo, hi, ctx, eta)
        f = state.f
    phases["ipm_ms"] = (time.perf_counter() - t0) * 1e3
    t1 = time.perf_counter()
    f_int = round_to_integral(Gp, f, a, b) if Gp.m else f
    phases["round_ms"] = (time.perf_counter() - t1) * 1e3
    t2 = time.perf_counter()
    f_opt, n_aug = augmenting_paths(Gp, f_int, a, b) if Gp.m else (f_int, 0)
    phases["ap_ms"] = (time.perf_counter() - t2) * 1e3
    value_p = flow_value(Gp, f_opt, a) if Gp.m else 0.0
    checks = {k: v.as_dict() for k, v in ctx.checks.items()}
    if Gp.m:
        _, cut = min_cut(Gp, f_opt, a)
        checks["min_cut"] = {"pass": abs(cut - value_p) <= 1e-9, "count": 1,
                             "violations": int(abs(cut - value_p) > 1e-9), "min_margin": None}
    raw = (value_p - shift - offset_s) / scale
    value = int(round(raw))
    if abs(raw - value) > 1e-6:
        raise AlgorithmFailure(f"non-integral final value {raw}")
    report = RunReport(
        value=value, flow=f_opt, graph=Gp, n=G.n, m=G.m, U=G.U if G.m else 0.0, eta=eta,
        steps=ctx.steps, probes=probes, oracle_calls=ctx.newton_iters, rejections=ctx.rejections,
        phases=phases, checks=checks, augmentations=n_aug, diagnostics=ctx.diagnostics,
    )
    verify = cfg.verify if cfg.verify is not None else G.m <= VERIFY_MAX_M
    if verify:
        ref, _ = reference_maxflow(G, a, b)
        report.reference_value = int(round(ref))
        report.verified = report.reference_value == value
        if not report.verified:
            raise AlgorithmFailure(f"value {value} disagrees with reference {report.reference_value}")
    return report
