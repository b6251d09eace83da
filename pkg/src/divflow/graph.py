"""Capacitated graphs, incidence operators, preconditioning and instance I/O.

Edges carry a fixed orientation ``tail -> head`` and two-sided capacities:
a flow ``f_e`` is feasible when ``-cap_down[e] <= f_e <= cap_up[e]``.  An
undirected edge has ``cap_up == cap_down``; a directed arc has ``cap_down == 0``.

The incidence matrix ``B`` is ``m x n`` with row ``e = (u, v)`` holding ``-1``
at ``u`` and ``+1`` at ``v``, so ``B.T @ f`` is the demand routed by ``f`` and
``chi(a, b) = 1_b - 1_a`` is the demand of one unit sent from ``a`` to ``b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DimensionError, ParseError, StateError


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    tails: np.ndarray
    heads: np.ndarray
    cap_up: np.ndarray
    cap_down: np.ndarray
    preconditioned: bool = False
    precond_edge_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        tails = np.asarray(self.tails, dtype=np.int64).reshape(-1)
        heads = np.asarray(self.heads, dtype=np.int64).reshape(-1)
        up = np.asarray(self.cap_up, dtype=np.float64).reshape(-1)
        down = np.asarray(self.cap_down, dtype=np.float64).reshape(-1)
        if not (len(tails) == len(heads) == len(up) == len(down)):
            raise DimensionError("edge arrays have mismatched lengths")
        if len(tails) and (tails.min() < 0 or heads.min() < 0
                           or max(tails.max(), heads.max()) >= self.n):
            raise ContractError("edge endpoint out of range")
        if np.any(tails == heads):
            raise ContractError("self-loops are not allowed")
        if np.any(up < 0) or np.any(down < 0):
            raise ContractError("capacities must be nonnegative")
        for name, arr in (("tails", tails), ("heads", heads), ("cap_up", up), ("cap_down", down)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ids = np.asarray(self.precond_edge_ids, dtype=np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "precond_edge_ids", ids)

    @classmethod
    def from_edges(cls, n, edges, cap_up, cap_down=None):
        """Build a graph from ``(tail, head)`` pairs.

        ``cap_down=None`` means undirected (``cap_down = cap_up``).
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        cap_up = np.broadcast_to(np.asarray(cap_up, dtype=np.float64), (len(edges),))
        if cap_down is None:
            cap_down = cap_up
        cap_down = np.broadcast_to(np.asarray(cap_down, dtype=np.float64), (len(edges),))
        return cls(n, edges[:, 0], edges[:, 1], cap_up.copy(), cap_down.copy())

    @property
    def m(self) -> int:
        return len(self.tails)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.tails.tolist(), self.heads.tolist()))

    @property
    def U(self) -> float:
        if self.m == 0:
            return 0.0
        return float(max(self.cap_up.max(), self.cap_down.max()))

    @property
    def is_undirected(self) -> bool:
        return bool(np.array_equal(self.cap_up, self.cap_down))

    @property
    def is_integral(self) -> bool:
        return bool(np.all(self.cap_up == np.round(self.cap_up))
                    and np.all(self.cap_down == np.round(self.cap_down)))

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Sparse ``m x n`` incidence matrix."""
        m = self.m
        rows = np.concatenate([np.arange(m), np.arange(m)])
        cols = np.concatenate([self.tails, self.heads])
        vals = np.concatenate([-np.ones(m), np.ones(m)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, self.n))

    def chi(self, a: int, b: int) -> np.ndarray:
        d = np.zeros(self.n)
        d[a] -= 1.0
        d[b] += 1.0
        return d

    def scaled(self, factor: float) -> "Graph":
        return replace(self, cap_up=self.cap_up * factor, cap_down=self.cap_down * factor)

    def is_feasible(self, f, tol: float = 0.0) -> bool:
        f = np.asarray(f, dtype=np.float64)
        return bool(np.all(f <= self.cap_up + tol) and np.all(f >= -self.cap_down - tol))


def apply_incidence_transpose(G: Graph, f) -> np.ndarray:
    """Return the demand ``B^T f`` routed by the edge flow ``f``."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (G.m,):
        raise DimensionError(f"flow has shape {f.shape}, expected ({G.m},)")
    return (np.bincount(G.heads, weights=f, minlength=G.n)
            - np.bincount(G.tails, weights=f, minlength=G.n))


def apply_incidence(G: Graph, y) -> np.ndarray:
    """Return the per-edge potential differences ``B y`` (``y[head] - y[tail]``)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (G.n,):
        raise DimensionError(f"potentials have shape {y.shape}, expected ({G.n},)")
    return y[G.heads] - y[G.tails]


def flow_value(G: Graph, f, a: int) -> float:
    """Net amount of flow leaving ``a``."""
    return float(-apply_incidence_transpose(G, f)[a])


def precondition(G: Graph, a: int, b: int) -> Graph:
    """Append ``m`` undirected ``a -> b`` edges of capacity ``2U``.

    The maximum ``ab``-flow value grows by exactly ``2 m U``.
    """
    if G.preconditioned:
        raise StateError("graph is already preconditioned")
    if not G.is_undirected:
        raise ContractError("preconditioning requires an undirected graph")
    m, U = G.m, G.U
    ids = np.arange(m, 2 * m, dtype=np.int64)
    extra = np.full(m, 2.0 * U)
    return Graph(
        G.n,
        np.concatenate([G.tails, np.full(m, a, dtype=np.int64)]),
        np.concatenate([G.heads, np.full(m, b, dtype=np.int64)]),
        np.concatenate([G.cap_up, extra]),
        np.concatenate([G.cap_down, extra]),
        preconditioned=True,
        precond_edge_ids=ids,
    )


def reduce_directed_to_undirected(G: Graph, a: int, b: int) -> tuple[Graph, float]:
    """Reduce a two-sided-capacity instance to an undirected one.

    Each edge splits into a symmetric part ``min(u+, u-)`` kept as is and a
    directed excess arc ``x -> y`` of capacity ``c``.  The arc becomes three
    undirected edges ``(a, y)``, ``(x, y)``, ``(x, b)`` of capacity ``c / 2``
    (endpoints that coincide are dropped).  For any cut ``S`` the gadget costs
    ``c/2`` plus ``c`` exactly when ``x in S`` and ``y not in S``, hence

        maxflow(G) = maxflow(G_und) - sum(c) / 2.
    """
    if G.is_undirected:
        return G, 0.0
    if G.preconditioned:
        raise StateError("cannot reduce a preconditioned graph")
    sym = np.minimum(G.cap_up, G.cap_down)
    tails, heads, caps = [], [], []
    keep = sym > 0
    tails.extend(G.tails[keep].tolist())
    heads.extend(G.heads[keep].tolist())
    caps.extend(sym[keep].tolist())
    offset = 0.0
    for e in range(G.m):
        excess = G.cap_up[e] - sym[e]
        x, y = int(G.tails[e]), int(G.heads[e])
        if excess <= 0:
            excess = G.cap_down[e] - sym[e]
            x, y = y, x
        if excess <= 0:
            continue
        half = excess / 2.0
        offset += half
        for u, v in ((a, y), (x, y), (x, b)):
            if u != v:
                tails.append(u)
                heads.append(v)
                caps.append(half)
    caps = np.asarray(caps, dtype=np.float64)
    return Graph(G.n, np.asarray(tails, dtype=np.int64), np.asarray(heads, dtype=np.int64), caps, caps.copy()), offset


def parse_dimacs(text: str) -> tuple[Graph, int, int]:
    """Parse DIMACS max-flow text; arcs are directed (``cap_down = 0``).

    Vertex ids in the file are 1-based; returned ids are 0-based.
    """
    n = None
    declared_m = None
    source = sink = None
    tails, heads, caps = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] == "c":
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "p":
                if len(parts) != 4 or parts[1] != "max":
                    raise ParseError(f"line {lineno}: malformed problem line {raw!r}")
                if n is not None:
                    raise ParseError(f"line {lineno}: duplicate problem line")
                n, declared_m = int(parts[2]), int(parts[3])
                if n < 0 or declared_m < 0:
                    raise ParseError(f"line {lineno}: negative sizes")
            elif kind == "n":
                if n is None:
                    raise ParseError(f"line {lineno}: node line before problem line")
                if len(parts) != 3 or parts[2] not in ("s", "t"):
                    raise ParseError(f"line {lineno}: malformed node line {raw!r}")
                v = int(parts[1]) - 1
                if not 0 <= v < n:
                    raise ParseError(f"line {lineno}: node id out of range")
                if parts[2] == "s":
                    source = v
                else:
                    sink = v
            elif kind == "a":
                if n is None:
                    raise ParseError(f"line {lineno}: arc line before problem line")
                if len(parts) != 4:
                    raise ParseError(f"line {lineno}: malformed arc line {raw!r}")
                u, v, c = int(parts[1]) - 1, int(parts[2]) - 1, float(parts[3])
                if not (0 <= u < n and 0 <= v < n):
                    raise ParseError(f"line {lineno}: arc endpoint out of range")
                if u == v:
                    raise ParseError(f"line {lineno}: self-loop")
                if c < 0 or not np.isfinite(c):
                    raise ParseError(f"line {lineno}: invalid capacity")
                tails.append(u)
                heads.append(v)
                caps.append(c)
            else:
                raise ParseError(f"line {lineno}: unknown line type {kind!r}")
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    if n is None:
        raise ParseError("missing problem line")
    if source is None or sink is None:
        raise ParseError("missing source or sink designation")
    if source == sink:
        raise ParseError("source and sink coincide")
    if declared_m is not None and declared_m != len(tails):
        raise ParseError(f"problem line declares {declared_m} arcs, found {len(tails)}")
    caps = np.asarray(caps, dtype=np.float64)
    G = Graph(n, np.asarray(tails, dtype=np.int64), np.asarray(heads, dtype=np.int64), caps, np.zeros_like(caps))
    return G, source, sink


def to_dimacs(G: Graph, a: int, b: int) -> str:
    """Serialize to DIMACS; reverse capacity becomes a second, opposite arc."""
    arcs = []
    for u, v, up, down in zip(G.tails, G.heads, G.cap_up, G.cap_down):
        if up > 0 or down == 0:
            arcs.append((u, v, up))
        if down > 0:
            arcs.append((v, u, down))
    lines = [f"p max {G.n} {len(arcs)}", f"n {a + 1} s", f"n {b + 1} t"]
    for u, v, c in arcs:
        cap = int(c) if c == int(c) else c
        lines.append(f"a {u + 1} {v + 1} {cap}")
    return "\n".join(lines) + "\n"


def random_instance(seed: int, n: int, m: int, U: int, directed: bool = True) -> tuple[Graph, int, int]:
    """Deterministic random instance with integer capacities in ``[1, U]``.

    The first edges form a path from the source ``0`` to the sink ``n - 1``
    through a random vertex ordering (truncated if ``m < n - 1``), so the sink
    is reachable whenever ``m >= n - 1``.
    """
    if n < 2 or m < 1 or U < 1:
        raise ContractError("need n >= 2, m >= 1, U >= 1")
    rng = np.random.default_rng(np.uint64(seed))
    a, b = 0, n - 1
    order = np.concatenate([[a], 1 + rng.permutation(n - 2), [b]]).astype(np.int64)
    edges = [(int(order[i]), int(order[i + 1])) for i in range(min(m, n - 1))]
    while len(edges) < m:
        u, v = (int(x) for x in rng.integers(0, n, size=2))
        if u != v:
            edges.append((u, v))
    caps = rng.integers(1, U + 1, size=m).astype(np.float64)
    if directed:
        return Graph.from_edges(n, edges, caps, np.zeros(m)), a, b
    return Graph.from_edges(n, edges, caps), a, b
