"""Delay-constrained least-weight relay path.

``rpf`` solves the LP relaxation of the path IP, decomposes the fractional
flow into s->r paths, collects every delay-feasible path it sees, and removes
the cheapest-delay feasible path from the region until the LP is infeasible
or integral. Removal is done by partitioning the region on that path's edges
(variable bounds only), which keeps the search exact and keeps each LP a
network polytope with one side row. ``rpf_oracle`` enumerates simple paths
for ground truth.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from . import simplex
from .relaygraph import RelayGraph

FLOW_TOL = 1e-9


class NoFeasiblePath(Exception):
    """No s->r path meets the delay budget."""


class CappedSearchError(RuntimeError):
    """LP-solve budget exhausted; ``best`` carries the best feasible path found."""

    def __init__(self, message: str, best: "RelayPath | None"):
        super().__init__(message)
        self.best = best


class FlowConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class RelayPath:
    nodes: tuple
    total_weight: float
    total_delay: float
    total_bs_cost: float

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    def edges(self):
        return list(zip(self.nodes[:-1], self.nodes[1:]))


def make_path(graph: RelayGraph, nodes: Sequence) -> RelayPath:
    es = [graph.edges[(a, b)] for a, b in zip(nodes[:-1], nodes[1:])]
    return RelayPath(tuple(nodes), math.fsum(e.w for e in es), math.fsum(e.t for e in es),
                     math.fsum(e.c_raw for e in es))


def _path_key(p: RelayPath):
    return (p.total_weight, p.hops, tuple(str(x) for x in p.nodes))


# --------------------------------------------------------------------------
# LP model
# --------------------------------------------------------------------------

@dataclass
class Cut:
    edges: tuple[int, ...]  # edge indices
    rhs: float
    path: tuple = ()


@dataclass
class PathLP:
    """Columns are edges; rows are per-node flow balance, the delay budget, and cuts."""

    nodes: list
    edges: list[tuple]
    weights: np.ndarray
    delays: np.ndarray
    s: object
    r: object
    t_max: float
    cuts: list[Cut] = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.edges)
        if self.lb is None:
            self.lb = np.zeros(n)
        if self.ub is None:
            self.ub = np.ones(n)
        self.index = {e: k for k, e in enumerate(self.edges)}
        known = set(range(n))
        for c in self.cuts:
            if not set(c.edges) <= known:
                raise ValueError("cut references an unknown edge")

    @classmethod
    def from_graph(cls, graph: RelayGraph, edges: Sequence[tuple] | None = None) -> "PathLP":
        es = sorted(graph.edges if edges is None else edges, key=lambda e: (str(e[0]), str(e[1])))
        nodes = sorted({x for e in es for x in e} | {graph.s, graph.r}, key=str)
        return cls(nodes, es, np.array([graph.edges[e].w for e in es], dtype=float),
                   np.array([graph.edges[e].t for e in es], dtype=float), graph.s, graph.r, graph.t_max)

    def copy(self) -> "PathLP":
        return PathLP(self.nodes, self.edges, self.weights, self.delays, self.s, self.r, self.t_max,
                      list(self.cuts), self.lb.copy(), self.ub.copy())

    def matrices(self):
        n = len(self.edges)
        row = {u: k for k, u in enumerate(self.nodes)}
        A_eq = np.zeros((len(self.nodes), n))
        for k, (i, j) in enumerate(self.edges):
            A_eq[row[i], k] += 1.0
            A_eq[row[j], k] -= 1.0
        b_eq = np.zeros(len(self.nodes))
        b_eq[row[self.s]] = 1.0
        b_eq[row[self.r]] = -1.0
        A_ub = np.zeros((1 + len(self.cuts), n))
        b_ub = np.zeros(1 + len(self.cuts))
        A_ub[0] = self.delays
        # with every x in [0, 1] the row can never bind above the summed delays;
        # clipping keeps a huge budget from swamping the simplex tolerances
        b_ub[0] = min(self.t_max, float(self.delays.sum()) + 1.0)
        for q, cut in enumerate(self.cuts, start=1):
            A_ub[q, list(cut.edges)] = 1.0
            b_ub[q] = cut.rhs
        return A_eq, b_eq, A_ub, b_ub


@dataclass
class LPSolution:
    x: np.ndarray
    objective: float
    lp: PathLP

    def values(self) -> dict:
        return {e: float(self.x[k]) for k, e in enumerate(self.lp.edges) if self.x[k] > FLOW_TOL}

    @property
    def integral(self) -> bool:
        return bool(np.all(np.minimum(np.abs(self.x), np.abs(1.0 - self.x)) <= 1e-9))


def solve_lp(lp: PathLP) -> LPSolution | None:
    """Optimal basic solution, or ``None`` when the LP is infeasible.

    Raises :class:`simplex.LPSolverError` on numerical failure.
    """
    if lp.s == lp.r:
        raise ValueError("source and target must differ")
    if not lp.edges:
        return None
    A_eq, b_eq, A_ub, b_ub = lp.matrices()
    res = simplex.solve(lp.weights, A_eq, b_eq, A_ub, b_ub, lp.lb, lp.ub)
    if res.status == simplex.INFEASIBLE:
        return None
    if res.status != simplex.OPTIMAL:
        raise simplex.LPSolverError(f"unexpected LP status {res.status}")
    return LPSolution(res.x, res.objective, lp)


# --------------------------------------------------------------------------
# flow decomposition
# --------------------------------------------------------------------------

@dataclass
class FlowDecomposition:
    paths: list[tuple[tuple, float]]
    cycles: list[tuple[tuple, float]]
    delays: list[float]
    weights: list[float]
    t_max: float

    def short(self, k: int) -> bool:
        return self.delays[k] <= self.t_max * (1 + 1e-12) + 1e-12

    @property
    def classes(self) -> list[str]:
        return ["short" if self.short(k) else "long" for k in range(len(self.paths))]

    def edge_flows(self) -> dict:
        acc: dict = {}
        for nodes, f in self.paths + self.cycles:
            for e in zip(nodes[:-1], nodes[1:]):
                acc[e] = acc.get(e, 0.0) + f
        return acc


def _find_cycle(flow: dict, tol: float):
    succ: dict = {}
    for (i, j), f in sorted(flow.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))):
        if f > tol:
            succ.setdefault(i, []).append(j)
    color: dict = {}
    for root in sorted(succ, key=str):
        if color.get(root):
            continue
        stack = [(root, iter(succ.get(root, ())))]
        path = [root]
        color[root] = 1
        while stack:
            u, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                color[u] = 2
                continue
            c = color.get(nxt, 0)
            if c == 1:
                k = path.index(nxt)
                return tuple(path[k:] + [nxt])
            if c == 0:
                color[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(succ.get(nxt, ()))))
    return None


def _widest_path(flow: dict, s, r, tol: float):
    """Max-bottleneck s->r path through positive-flow edges (deterministic ties)."""
    succ: dict = {}
    for (i, j), f in flow.items():
        if f > tol:
            succ.setdefault(i, []).append((j, f))
    best = {s: math.inf}
    prev: dict = {}
    heap = [(-math.inf, str(s), s)]
    done = set()
    while heap:
        negb, _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == r:
            break
        for v, f in sorted(succ.get(u, ()), key=lambda t: str(t[0])):
            bv = min(-negb, f)
            if bv > best.get(v, 0.0) + 1e-15:
                best[v] = bv
                prev[v] = u
                heapq.heappush(heap, (-bv, str(v), v))
    if r not in prev:
        return None
    path = [r]
    while path[-1] != s:
        path.append(prev[path[-1]])
    return tuple(reversed(path))


def _support_paths(flow: dict, s, r, limit: int = 5000):
    succ: dict = {}
    for (i, j) in sorted(flow, key=lambda e: (str(e[0]), str(e[1]))):
        succ.setdefault(i, []).append(j)
    out, path = [], [s]

    def dfs(u):
        if len(out) >= limit:
            return
        if u == r:
            out.append(tuple(path))
            return
        for v in succ.get(u, ()):
            if v not in path:
                path.append(v)
                dfs(v)
                path.pop()

    dfs(s)
    return out


def _two_path_split(flow: dict, s, r, tol: float):
    """Write ``flow`` as f*p1 + (1-f)*p2 for two s->r paths, if possible."""
    for p1 in _support_paths(flow, s, r):
        e1 = list(zip(p1[:-1], p1[1:]))
        f = min(flow[e] for e in e1)
        if f >= 1.0 - 1e-7:
            continue
        rest = dict(flow)
        for e in e1:
            rest[e] -= f
        rest = {e: v / (1.0 - f) for e, v in rest.items() if v > 1e-7}
        if any(abs(v - 1.0) > 1e-6 for v in rest.values()):
            continue
        p2 = _widest_path(rest, s, r, tol)
        if p2 is None or len(p2) - 1 != len(rest):
            continue
        return sorted([(p1, f), (p2, 1.0 - f)], key=lambda pf: -pf[1])
    return None


def decompose_flow(values: dict, graph_or_lp, tol: float = FLOW_TOL) -> FlowDecomposition:
    """Split an s->r unit flow into weighted paths (plus any cycles, cancelled first)."""
    s, r, t_max = graph_or_lp.s, graph_or_lp.r, graph_or_lp.t_max
    if isinstance(graph_or_lp, PathLP):
        wt = {e: float(graph_or_lp.weights[k]) for k, e in enumerate(graph_or_lp.edges)}
        dl = {e: float(graph_or_lp.delays[k]) for k, e in enumerate(graph_or_lp.edges)}
    else:
        wt = {e: d.w for e, d in graph_or_lp.edges.items()}
        dl = {e: d.t for e, d in graph_or_lp.edges.items()}
    flow = {e: float(f) for e, f in values.items() if f > tol}
    out_s = sum(f for (i, _), f in flow.items() if i == s) - sum(f for (_, j), f in flow.items() if j == s)
    if abs(out_s - 1.0) > 1e-6:
        raise FlowConsistencyError(f"net flow out of source is {out_s}, expected 1")
    cycles = []
    while True:
        cyc = _find_cycle(flow, tol)
        if cyc is None:
            break
        es = list(zip(cyc[:-1], cyc[1:]))
        f = min(flow[e] for e in es)
        for e in es:
            flow[e] -= f
            if flow[e] <= tol:
                del flow[e]
        cycles.append((cyc, f))
    paths = []
    for _ in range(len(values) + 1):
        p = _widest_path(flow, s, r, tol)
        if p is None:
            break
        es = list(zip(p[:-1], p[1:]))
        f = min(flow[e] for e in es)
        for e in es:
            flow[e] -= f
            if flow[e] <= tol:
                del flow[e]
        paths.append((p, f))
    leftover = max(flow.values(), default=0.0)
    if leftover > 1e-6:
        raise FlowConsistencyError(f"residual flow {leftover} after decomposition")
    if len(paths) > 2 and not cycles:
        # greedy extraction can fragment a two-path mix; look for the exact split
        split = _two_path_split({e: f for e, f in values.items() if f > tol}, s, r, tol)
        if split is not None:
            paths = split
    delays = [math.fsum(dl[e] for e in zip(p[:-1], p[1:])) for p, _ in paths]
    weights = [math.fsum(wt[e] for e in zip(p[:-1], p[1:])) for p, _ in paths]
    return FlowDecomposition(paths, cycles, delays, weights, t_max)


def two_path_ok(dec: FlowDecomposition) -> bool:
    """At most two distinct s->r paths carry flow (one path means integral)."""
    return len({p for p, _ in dec.paths}) <= 2


# --------------------------------------------------------------------------
# cuts
# --------------------------------------------------------------------------

def add_cut(lp: PathLP, p_s: Sequence, x_ps: float | None = None, mode: str = "epsilon",
            eps: float = 1e-6, x: np.ndarray | None = None) -> PathLP:
    """Return a copy of ``lp`` with one more row over the edges of path ``p_s``.

    ``mode="epsilon"``: sum over p_s of x <= X_ps - eps, where X_ps is the
    current flow sum on the path (given, or computed from ``x``).
    ``mode="combinatorial"``: sum over p_s of x <= |p_s| - 1, which removes
    exactly the integral selection of p_s.
    """
    idx = tuple(lp.index[e] for e in zip(p_s[:-1], p_s[1:]))
    if mode == "combinatorial":
        rhs = len(idx) - 1.0
    elif mode == "epsilon":
        if x_ps is None:
            if x is None:
                raise ValueError("epsilon cut needs X_ps or the current solution")
            x_ps = float(sum(x[k] for k in idx))
        rhs = x_ps - eps
    else:
        raise ValueError(f"unknown cut mode {mode!r}")
    out = lp.copy()
    out.cuts.append(Cut(idx, rhs, tuple(p_s)))
    return out


# --------------------------------------------------------------------------
# search
# --------------------------------------------------------------------------

def _dijkstra(adj: dict, src) -> dict:
    dist = {src: 0.0}
    heap = [(0.0, str(src), src)]
    while heap:
        d, _, u = heapq.heappop(heap)
        if d > dist.get(u, math.inf):
            continue
        for v, t in adj.get(u, ()):
            nd = d + t
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, str(v), v))
    return dist


def useful_edges(graph: RelayGraph) -> list[tuple]:
    """Edges lying on at least one s->r walk whose delay fits the budget."""
    fwd: dict = {}
    bwd: dict = {}
    for (i, j), e in graph.edges.items():
        fwd.setdefault(i, []).append((j, e.t))
        bwd.setdefault(j, []).append((i, e.t))
    ds = _dijkstra(fwd, graph.s)
    dr = _dijkstra(bwd, graph.r)
    lim = graph.t_max * (1 + 1e-12) + 1e-12
    return [(i, j) for (i, j), e in graph.edges.items()
            if j != graph.s and i != graph.r
            and ds.get(i, math.inf) + e.t + dr.get(j, math.inf) <= lim]


@dataclass
class SolverStats:
    lp_solves: int = 0
    cuts: int = 0
    branches: int = 0
    two_path_violations: int = 0
    decompositions: list = field(default_factory=list)


@dataclass
class _Node:
    lp: PathLP
    depth: int
    parent_obj: float
    cut_paths: set = field(default_factory=set)


def rpf(graph: RelayGraph, cut_mode: str = "partition", eps: float = 1e-6, prune: bool = True,
        max_lp_solves: int | None = None, trace: IO[str] | None = None,
        stats: SolverStats | None = None) -> RelayPath:
    """Least-weight s->r path with total delay within ``graph.t_max``.

    Raises :class:`NoFeasiblePath` or :class:`CappedSearchError`.

    ``cut_mode`` picks how the cheapest-delay short path p_s is removed:

    * ``"partition"`` (default): split the region into children that each
      exclude p_s through variable bounds only, so every LP keeps a single
      side row and its optima mix at most two paths.
    * ``"combinatorial"``: add the row sum(x on p_s) <= |p_s| - 1 when it
      separates the current point, otherwise partition.
    * ``"epsilon"``: the strict-flow row sum(x on p_s) <= X_ps - eps and no
      partitioning. It can remove integral paths that were never seen, so
      it is not exact; kept for comparison.
    """
    if cut_mode not in ("partition", "combinatorial", "epsilon"):
        raise ValueError(f"unknown cut mode {cut_mode!r}")
    if graph.s == graph.r:
        raise ValueError("source and target must differ")
    stats = stats if stats is not None else SolverStats()
    edges = useful_edges(graph)
    if not edges:
        raise NoFeasiblePath(f"no delay-feasible path from {graph.s} to {graph.r}")
    root = PathLP.from_graph(graph, edges)
    cap = max_lp_solves or 10 * len(edges)
    solves0 = stats.lp_solves  # ``stats`` may be shared across calls
    found: dict[tuple, RelayPath] = {}
    stack = [_Node(root, 0, -math.inf)]
    it = 0

    def emit(rec):
        if trace is not None:
            trace.write(json.dumps(rec, default=str) + "\n")

    def best():
        return min(found.values(), key=_path_key) if found else None

    while stack:
        node = stack.pop()
        last_obj = node.parent_obj
        while True:
            if stats.lp_solves - solves0 >= cap:
                raise CappedSearchError(f"LP-solve cap {cap} reached", best())
            sol = solve_lp(node.lp)
            stats.lp_solves += 1
            it += 1
            if sol is None:
                emit({"iteration": it, "depth": node.depth, "objective": None, "action": "infeasible"})
                break
            if sol.objective < last_obj - 1e-9 * max(1.0, abs(last_obj)):
                raise simplex.LPSolverError("LP objective decreased after tightening")
            last_obj = sol.objective
            dec = decompose_flow(sol.values(), node.lp)
            stats.decompositions.append((sol.integral, len(dec.paths)))
            if not two_path_ok(dec):
                stats.two_path_violations += 1
            for k, (p, _) in enumerate(dec.paths):
                if dec.short(k) and p not in found:
                    found[p] = make_path(graph, p)
            rec = {"iteration": it, "depth": node.depth, "objective": sol.objective,
                   "paths": [[list(p), f, dec.delays[k], dec.weights[k], dec.classes[k]]
                             for k, (p, f) in enumerate(dec.paths)]}
            incumbent = best()
            if len(dec.paths) == 1 and not dec.cycles:
                emit({**rec, "action": "integral"})
                break
            if prune and incumbent is not None and sol.objective >= incumbent.total_weight - 1e-12:
                emit({**rec, "action": "pruned"})
                break
            shorts = [k for k in range(len(dec.paths)) if dec.short(k)]
            if not shorts:
                # only cycles or long paths: split on the most fractional edge
                k = int(np.argmin(np.abs(sol.x - 0.5)))
                _branch_on_edge(node, k, stack, sol.objective)
                stats.branches += 1
                emit({**rec, "action": "branch-edge", "edge": list(node.lp.edges[k])})
                break
            ks = min(shorts, key=lambda k: (dec.delays[k], dec.weights[k], [str(x) for x in dec.paths[k][0]]))
            p_s = dec.paths[ks][0]
            idx = [node.lp.index[e] for e in zip(p_s[:-1], p_s[1:])]
            x_ps = float(sol.x[idx].sum())
            if cut_mode == "epsilon":
                node.lp = add_cut(node.lp, p_s, x_ps, "epsilon", eps)
                stats.cuts += 1
                emit({**rec, "action": "cut", "cut": {"path": list(p_s), "rhs": x_ps - eps}})
                continue
            if (cut_mode == "combinatorial" and p_s not in node.cut_paths
                    and x_ps > len(idx) - 1 + 1e-9):
                node.lp = add_cut(node.lp, p_s, mode="combinatorial")
                node.cut_paths.add(p_s)
                stats.cuts += 1
                emit({**rec, "action": "cut", "cut": {"path": list(p_s), "rhs": len(idx) - 1}})
                continue
            # the valid cut does not separate: partition the region on p_s's edges
            _partition(node, idx, stack, sol.objective)
            stats.branches += 1
            emit({**rec, "action": "partition", "path": list(p_s)})
            break
    result = best()
    if result is None:
        raise NoFeasiblePath(f"no delay-feasible path from {graph.s} to {graph.r}")
    return result


def _partition(node: _Node, idx: list[int], stack: list, obj: float) -> None:
    """Children k: first k path edges forced to 1, edge k forced to 0 (excludes the path)."""
    children = []
    for k in range(len(idx)):
        lp = node.lp.copy()
        if any(lp.lb[q] > 0 for q in idx[k:k + 1]):
            continue  # edge already forced in: this child is empty
        for q in idx[:k]:
            lp.lb[q] = 1.0
        lp.ub[idx[k]] = 0.0
        if np.any(lp.lb > lp.ub):
            continue
        children.append(_Node(lp, node.depth + 1, obj, set(node.cut_paths)))
    stack.extend(reversed(children))


def _branch_on_edge(node: _Node, k: int, stack: list, obj: float) -> None:
    lo = node.lp.copy()
    lo.ub[k] = 0.0
    hi = node.lp.copy()
    hi.lb[k] = 1.0
    stack.extend([_Node(hi, node.depth + 1, obj, set(node.cut_paths)),
                  _Node(lo, node.depth + 1, obj, set(node.cut_paths))])


def rpf_oracle(graph: RelayGraph, max_nodes: int = 14) -> RelayPath:
    """Exhaustive DFS over simple s->r paths; ties go to fewer hops, then lexicographic order."""
    nodes = {x for e in graph.edges for x in e} | {graph.s, graph.r}
    if len(nodes) > max_nodes:
        raise ValueError(f"oracle limited to {max_nodes} vertices, got {len(nodes)}")
    succ = graph.successors()
    lim = graph.t_max * (1 + 1e-12) + 1e-12
    best: RelayPath | None = None
    path = [graph.s]
    on_path = {graph.s}

    def dfs(u, delay):
        nonlocal best
        if u == graph.r:
            cand = make_path(graph, path)
            if cand.total_delay <= lim and (best is None or _path_key(cand) < _path_key(best)):
                best = cand
            return
        for v in succ.get(u, ()):
            if v in on_path:
                continue
            nd = delay + graph.edges[(u, v)].t
            if nd > lim:
                continue
            path.append(v)
            on_path.add(v)
            dfs(v, nd)
            path.pop()
            on_path.discard(v)

    dfs(graph.s, 0.0)
    if best is None:
        raise NoFeasiblePath(f"no delay-feasible path from {graph.s} to {graph.r}")
    return best


def enumerate_paths(graph: RelayGraph) -> list[RelayPath]:
    """Every simple s->r path regardless of delay."""
    succ = graph.successors()
    out = []
    path = [graph.s]

    def dfs(u):
        if u == graph.r:
            out.append(make_path(graph, path))
            return
        for v in succ.get(u, ()):
            if v not in path:
                path.append(v)
                dfs(v)
                path.pop()

    dfs(graph.s)
    return out


@dataclass(frozen=True)
class Decision:
    kind: str  # "D2D" or "B2D"
    path: RelayPath | None = None
    reason: str | None = None  # for B2D: "NoFeasiblePath" or "CostExceedsB2D"


def decide_delivery(path: RelayPath | None, b2d_cost_r: float) -> Decision:
    """Serve over D2D only when a path exists and its incentive cost is strictly below B2D."""
    if path is None:
        return Decision("B2D", None, "NoFeasiblePath")
    if path.total_bs_cost < b2d_cost_r:
        return Decision("D2D", path)
    return Decision("B2D", path, "CostExceedsB2D")
