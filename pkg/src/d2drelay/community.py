"""Durable community detection: greedy three-phase search, exhaustive oracle,
and local-optimality certificates.

Durability of a set C is ``w_C / (w_C + w_C_out)``; a community with no
incident weight at all scores 0.
"""
from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .social import ContactGraph

EPS = 1e-12


def _ratio(w_in: float, w_plus: float) -> float:
    return w_in / w_plus if w_plus > 0 else 0.0


def internal_weight(c: Iterable[int], graph: ContactGraph) -> tuple[float, float]:
    """(w_C, w_C_out) for node set ``c``."""
    cs = set(c)
    w_in = w_out = 0.0
    for u in cs:
        for v, w in graph.adj.get(u, {}).items():
            if v in cs:
                w_in += w
            else:
                w_out += w
    return w_in / 2.0, w_out


def durability(c: Iterable[int], graph: ContactGraph) -> float:
    cs = set(c)
    if not cs:
        raise ValueError("community must be non-empty")
    w_in, w_out = internal_weight(cs, graph)
    return _ratio(w_in, w_in + w_out)


@dataclass
class CommunityStructure:
    communities: list[frozenset]
    h: list[float]
    membership: dict[int, int] = field(default=None)

    def __post_init__(self):
        self.membership = {u: i for i, c in enumerate(self.communities) for u in c}

    @property
    def k(self) -> int:
        return len(self.communities)

    @property
    def objective(self) -> float:
        return float(sum(self.h))

    def community_of(self, u: int) -> int | None:
        return self.membership.get(u)

    def internal_weight(self, idx: int, graph: ContactGraph) -> float:
        return internal_weight(self.communities[idx], graph)[0]

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], graph: ContactGraph) -> "CommunityStructure":
        comms = [frozenset(s) for s in sets if len(set(s))]
        comms.sort(key=lambda c: min(c))
        return cls(comms, [durability(c, graph) for c in comms])

    def is_partition_of(self, nodes: Iterable[int]) -> bool:
        seen: set = set()
        for c in self.communities:
            if seen & c:
                return False
            seen |= c
        return seen == set(nodes)

    def dump_csv(self, path: str | Path, header_lines: Iterable[str] = ()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# k={self.k} R={self.objective:.9f}\n")
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["device_id", "community_id"])
            for u in sorted(self.membership):
                wr.writerow([u, self.membership[u]])


class _State:
    """Bookkeeping for one community: internal weight and volume."""

    __slots__ = ("members", "w_in", "vol")

    def __init__(self, members, w_in, vol):
        self.members = set(members)
        self.w_in = w_in
        self.vol = vol

    @property
    def h(self) -> float:
        return _ratio(self.w_in, self.vol - self.w_in)


def dcd(graph: ContactGraph, seed: int = 0, polish: bool = True,
        perturbations: int = 30) -> CommunityStructure:
    """Greedy development / augmentation / refinement search for high total durability.

    With ``polish`` the three-phase result is refined by single-node moves and
    merges that raise R, then by ``perturbations`` rounds of random
    community splits followed by the same ascent (kept only when R rises).
    """
    comms = _three_phase(graph, seed)
    if not polish:
        return CommunityStructure.from_sets(comms, graph)
    return _iterated_ascent(graph, comms, seed, perturbations)


def _three_phase(graph: ContactGraph, seed: int) -> list[set]:
    rng = random.Random(seed)
    adj = graph.adj
    deg = {u: sum(adj[u].values()) for u in graph.nodes}

    # Phase I: grow communities from random seeds
    unassigned = set(graph.nodes)
    order = list(graph.nodes)
    rng.shuffle(order)
    comms: list[_State] = []
    for x in order:
        if x not in unassigned:
            continue
        unassigned.discard(x)
        st = _State([x], 0.0, deg[x])
        link: dict[int, float] = {}
        for v, w in adj[x].items():
            if v in unassigned:
                link[v] = link.get(v, 0.0) + w
        while True:
            cur = st.h
            best, best_h = None, cur
            for y in sorted(link):
                k = link[y]
                h_new = _ratio(st.w_in + k, st.vol + deg[y] - st.w_in - k)
                if h_new > best_h + EPS:
                    best, best_h = y, h_new
            if best is None:
                break
            k = link.pop(best)
            st.members.add(best)
            st.w_in += k
            st.vol += deg[best]
            unassigned.discard(best)
            for v, w in adj[best].items():
                if v in unassigned:
                    link[v] = link.get(v, 0.0) + w
        comms.append(st)

    # Phase II: eject members whose removal raises durability
    ejected: list[_State] = []
    for st in comms:
        changed = True
        while changed and len(st.members) > 1:
            changed = False
            cur = st.h
            best, best_h = None, cur
            for u in sorted(st.members):
                k = sum(w for v, w in adj[u].items() if v in st.members)
                h_new = _ratio(st.w_in - k, st.vol - deg[u] - st.w_in + k)
                if h_new > best_h + EPS:
                    best, best_h, best_k = u, h_new, k
            if best is not None:
                st.members.discard(best)
                st.w_in -= best_k
                st.vol -= deg[best]
                ejected.append(_State([best], 0.0, deg[best]))
                changed = True
    comms.extend(ejected)

    # Phase III: merge the best adjacent pair while it helps
    cid = {}
    states = {}
    for i, st in enumerate(comms):
        states[i] = st
        for u in st.members:
            cid[u] = i
    between: dict[int, dict[int, float]] = {i: {} for i in states}
    for (u, v), e in graph.edges.items():
        a, b = cid[u], cid[v]
        if a != b:
            between[a][b] = between[a].get(b, 0.0) + e.weight
            between[b][a] = between[b].get(a, 0.0) + e.weight
    while True:
        best, best_gain = None, EPS
        for a in sorted(states):
            sa = states[a]
            for b in sorted(between[a]):
                if b <= a:
                    continue
                sb = states[b]
                w_ab = between[a][b]
                w_in = sa.w_in + sb.w_in + w_ab
                gain = _ratio(w_in, sa.vol + sb.vol - w_in) - sa.h - sb.h
                if gain > best_gain:
                    best, best_gain = (a, b), gain
        if best is None:
            break
        a, b = best
        sa, sb = states[a], states.pop(b)
        sa.w_in += sb.w_in + between[a].pop(b)
        sa.vol += sb.vol
        sa.members |= sb.members
        del between[b][a]
        for c, w in between.pop(b).items():
            between[a][c] = between[a].get(c, 0.0) + w
            between[c][a] = between[c].get(a, 0.0) + w
            del between[c][b]
    return [st.members for st in states.values()]


def _ascent(graph: ContactGraph, sets: Iterable[Iterable[int]]) -> list[set]:
    """Apply the best R-improving node move or merge until none is left."""
    adj = graph.adj
    deg = {u: sum(adj[u].values()) for u in graph.nodes}
    comms: dict[int, set] = {}
    mem: dict[int, int] = {}
    for i, c in enumerate(sets):
        comms[i] = set(c)
        for u in c:
            mem[u] = i
    nxt = len(comms)
    w_in = {i: internal_weight(c, graph)[0] for i, c in comms.items()}
    vol = {i: sum(deg[u] for u in c) for i, c in comms.items()}

    def h(w, v):
        return _ratio(w, v - w)

    while True:
        best, best_gain = None, EPS
        for u in graph.nodes:
            a = mem[u]
            link: dict[int, float] = {}
            for v, w in adj[u].items():
                link[mem[v]] = link.get(mem[v], 0.0) + w
            ka = link.get(a, 0.0)
            base = h(w_in[a], vol[a])
            left = h(w_in[a] - ka, vol[a] - deg[u])
            if len(comms[a]) > 1 and left - base > best_gain:
                best, best_gain = (u, None, link), left - base
            for b in sorted(link):
                if b == a:
                    continue
                gain = left + h(w_in[b] + link[b], vol[b] + deg[u]) - base - h(w_in[b], vol[b])
                if gain > best_gain:
                    best, best_gain = (u, b, link), gain
        between: dict[tuple[int, int], float] = {}
        for (u, v), e in graph.edges.items():
            a, b = sorted((mem[u], mem[v]))
            if a != b:
                between[(a, b)] = between.get((a, b), 0.0) + e.weight
        for (a, b) in sorted(between):
            gain = (h(w_in[a] + w_in[b] + between[(a, b)], vol[a] + vol[b])
                    - h(w_in[a], vol[a]) - h(w_in[b], vol[b]))
            if gain > best_gain:
                best, best_gain = (a, b), gain
        if best is None:
            break
        if len(best) == 2:
            a, b = best
            w_in[a] += w_in.pop(b) + between[(a, b)]
            vol[a] += vol.pop(b)
            for u in comms[b]:
                mem[u] = a
            comms[a] |= comms.pop(b)
            continue
        u, b, link = best
        a = mem[u]
        if b is None:
            b, nxt = nxt, nxt + 1
            comms[b], w_in[b], vol[b] = set(), 0.0, 0.0
        comms[a].discard(u)
        w_in[a] -= link.get(a, 0.0)
        vol[a] -= deg[u]
        comms[b].add(u)
        w_in[b] += link.get(b, 0.0)
        vol[b] += deg[u]
        mem[u] = b
        if not comms[a]:
            del comms[a], w_in[a], vol[a]
    return list(comms.values())


def _iterated_ascent(graph: ContactGraph, sets: list[set], seed: int, rounds: int) -> CommunityStructure:
    rng = random.Random(seed + 1)
    cur = CommunityStructure.from_sets(_ascent(graph, sets), graph)
    for _ in range(rounds):
        comms = [set(c) for c in cur.communities]
        big = [c for c in comms if len(c) > 1]
        if not big:
            break
        c = rng.choice(big)
        members = sorted(c)
        rng.shuffle(members)
        part = set(members[: rng.randint(1, len(members) - 1)])
        comms.remove(c)
        comms += [part, c - part]
        cand = CommunityStructure.from_sets(_ascent(graph, comms), graph)
        if cand.objective > cur.objective + EPS:
            cur = cand
    return cur


def _partitions(items: list):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def objective_of(sets: Iterable[Iterable[int]], graph: ContactGraph) -> float:
    return sum(durability(s, graph) for s in sets)


def dcd_oracle(graph: ContactGraph, max_nodes: int = 10) -> CommunityStructure:
    """Exhaustive search over all set partitions (Bell-number many)."""
    nodes = list(graph.nodes)
    if len(nodes) > max_nodes:
        raise ValueError(f"oracle limited to {max_nodes} nodes, got {len(nodes)}")
    best, best_key = None, None
    for part in _partitions(nodes):
        r = objective_of(part, graph)
        canon = sorted(tuple(sorted(s)) for s in part)
        # higher R, then fewer communities, then lexicographic
        key = (-round(r, 12), len(part), canon)
        if best_key is None or key < best_key:
            best, best_key = part, key
    return CommunityStructure.from_sets(best, graph)


@dataclass
class Violation:
    kind: str  # "add", "remove" or "merge"
    community: int
    other: object
    gain: float


@dataclass
class Certificate:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations


def certify_local_optimality(structure: CommunityStructure, graph: ContactGraph,
                             tol: float = 1e-9, literal: bool = False) -> Certificate:
    """Check that no single-node add, single-node removal or pairwise merge raises R.

    An add moves an outside neighbour v into C, so v's current community
    loses it; a removal turns a member into a singleton; a merge joins two
    communities. With ``literal=True`` adds and removals are judged on h_C of
    the community alone, ignoring the effect on v's own community; even
    R-optimal partitions often fail that stricter form.
    """
    out = []
    comms = structure.communities
    hs = [durability(c, graph) for c in comms]
    owner = {u: i for i, c in enumerate(comms) for u in c}
    for i, c in enumerate(comms):
        neigh = {v for u in c for v in graph.adj.get(u, {}) if v not in c}
        for v in sorted(neigh):
            gain = durability(c | {v}, graph) - hs[i]
            if not literal:
                j = owner[v]
                rest = comms[j] - {v}
                gain += (durability(rest, graph) if rest else 0.0) - hs[j]
            if gain > tol:
                out.append(Violation("add", i, v, gain))
        if len(c) > 1:
            for u in sorted(c):
                gain = durability(c - {u}, graph) - hs[i]
                if gain > tol:
                    out.append(Violation("remove", i, u, gain))
    for i in range(len(comms)):
        for j in range(i + 1, len(comms)):
            gain = durability(comms[i] | comms[j], graph) - hs[i] - hs[j]
            if gain > tol:
                out.append(Violation("merge", i, j, gain))
    return Certificate(out)
