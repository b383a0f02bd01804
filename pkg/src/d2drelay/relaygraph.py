"""Instantaneous multi-hop D2D graph at request time.

Pipeline: in-range pairs -> link conflict sets -> RB colouring -> SINR, rate,
delay -> SINR screen -> incentive cost and social weight -> total edge weight.
The BS is attached to every device through its B2D cost.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .channel import ChannelParams, DegenerateGeometryError, FadingField, hop_delay, rate, received_power
from .community import CommunityStructure
from .mobility import MobilityTrace
from .social import ContactGraph, EdgeClass

BS = "BS"


@dataclass(frozen=True)
class RelayParams:
    n_rbs: int = 25  # 5 MHz of 180 kHz RBs
    n_cellular: int = 20
    conflict_factor: float = 2.0  # conflict radius in units of d_max
    rule1_scale: float = 1.0
    rule3_scale: float = 1.0
    rule2_factor: float = 1.5
    rule4_factor: float = 0.75
    rule3_use_max: bool = False
    include_bs_interference: bool = True

    def __post_init__(self):
        if self.n_rbs < 1:
            raise ValueError("n_rbs must be >= 1")
        if self.n_cellular < 0 or self.n_cellular >= self.n_rbs:
            raise ValueError("n_cellular must lie in [0, n_rbs)")
        if self.conflict_factor <= 0:
            raise ValueError("conflict_factor must be > 0")


@dataclass
class RelayEdge:
    c_raw: float
    c: float
    W: float
    w: float
    t: float
    rb: int
    sinr: float
    rate: float
    distance: float


@dataclass
class RelayGraph:
    nodes: tuple
    edges: dict[tuple[int, int], RelayEdge]
    s: int
    r: int
    t: float
    b: float
    t_max: float
    b2d: dict[int, float] = field(default_factory=dict)
    positions: dict[int, np.ndarray] = field(default_factory=dict)
    cochannel: dict[tuple[int, int], tuple] = field(default_factory=dict)
    fading: FadingField | None = None
    channel: ChannelParams | None = None
    bs_position: tuple[float, float] = (500.0, 500.0)

    def out_edges(self, u):
        return [(i, j) for (i, j) in self.edges if i == u]

    def successors(self) -> dict:
        succ: dict = {u: [] for u in self.nodes}
        for (i, j) in sorted(self.edges):
            succ.setdefault(i, []).append(j)
        return succ

    def with_weights(self, key) -> "RelayGraph":
        """Copy whose edge weight ``w`` is ``key(edge)``; used for baselines."""
        edges = {e: RelayEdge(d.c_raw, d.c, d.W, float(key(d)), d.t, d.rb, d.sinr, d.rate, d.distance)
                 for e, d in self.edges.items()}
        return RelayGraph(self.nodes, edges, self.s, self.r, self.t, self.b, self.t_max, self.b2d,
                          self.positions, self.cochannel, self.fading, self.channel, self.bs_position)

    def with_tmax(self, t_max: float) -> "RelayGraph":
        return RelayGraph(self.nodes, self.edges, self.s, self.r, self.t, self.b, t_max, self.b2d,
                          self.positions, self.cochannel, self.fading, self.channel, self.bs_position)

    def dump_csv(self, path: str | Path, header_lines: Iterable[str] = ()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# s={self.s} r={self.r} t={self.t!r} b={self.b!r} t_max={self.t_max!r}\n")
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["i", "j", "c_ij", "W_ij", "w_ij", "t_ij", "rb"])
            for (i, j) in sorted(self.edges):
                e = self.edges[(i, j)]
                wr.writerow([i, j, repr(e.c_raw), repr(e.W), repr(e.w), repr(e.t), e.rb])
            for j in sorted(self.b2d):
                wr.writerow([BS, j, repr(self.b2d[j]), "", "", "", ""])


def load_relay_graph_csv(path: str | Path, s: int | None = None, r: int | None = None,
                         t_max: float | None = None) -> RelayGraph:
    """Read a graph written by :meth:`RelayGraph.dump_csv`.

    ``s``, ``r`` and ``t_max`` default to the values recorded in the dump's
    comment header.
    """
    meta = {}
    edges = {}
    b2d = {}
    with open(path, newline="", encoding="utf-8") as fh:
        body = []
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
            else:
                body.append(line)
    reader = csv.DictReader(body)
    need = {"i", "j", "c_ij", "W_ij", "w_ij", "t_ij", "rb"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ValueError(f"relay graph dump must have columns {sorted(need)}")
    for rownum, row in enumerate(reader, start=1):
        try:
            if row["i"] == BS:
                b2d[int(row["j"])] = float(row["c_ij"])
                continue
            i, j = int(row["i"]), int(row["j"])
            c = float(row["c_ij"])
            W = float(row["W_ij"])
            w = float(row["w_ij"])
            t = float(row["t_ij"])
            rb = int(row["rb"]) if row["rb"] not in ("", None) else -1
        except (TypeError, ValueError) as exc:
            raise ValueError(f"bad relay graph row {rownum}: {exc}") from None
        edges[(i, j)] = RelayEdge(c, c, W, w, t, rb, math.nan, math.nan, math.nan)
    nodes = sorted({x for e in edges for x in e} | set(b2d))
    s = int(meta["s"]) if s is None else s
    r = int(meta["r"]) if r is None else r
    t_max = float(meta["t_max"]) if t_max is None else t_max
    return RelayGraph(tuple(nodes), edges, s, r, float(meta.get("t", 0.0)), float(meta.get("b", 0.0)),
                      t_max, b2d)


def _dist_matrix(xy: np.ndarray) -> np.ndarray:
    diff = xy[:, None, :] - xy[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def in_range_pairs(positions: dict[int, np.ndarray], d_max: float) -> list[tuple[int, int]]:
    """All ordered pairs within ``d_max`` (no SINR screen)."""
    ids = sorted(positions)
    if not ids:
        return []
    xy = np.array([positions[i] for i in ids], dtype=float)
    D = _dist_matrix(xy)
    out = []
    for a, b in zip(*np.nonzero(D <= d_max)):
        if a == b:
            continue
        if D[a, b] == 0:
            raise DegenerateGeometryError(f"devices {ids[a]} and {ids[b]} are co-located")
        out.append((ids[a], ids[b]))
    return sorted(out)


def conflict_sets(links: list[tuple[int, int]], positions: dict[int, np.ndarray],
                  radius: float) -> list[set[int]]:
    """Index sets of conflicting links.

    Two links conflict when the transmitter of one is within ``radius`` of
    either endpoint of the other.
    """
    if not links:
        return []
    ids = sorted(positions)
    idx = {u: k for k, u in enumerate(ids)}
    xy = np.array([positions[u] for u in ids], dtype=float)
    D = _dist_matrix(xy) <= radius
    tx = np.array([idx[i] for i, _ in links])
    rx = np.array([idx[j] for _, j in links])
    M = D[np.ix_(tx, tx)] | D[np.ix_(tx, rx)] | D[np.ix_(rx, tx)]
    np.fill_diagonal(M, False)
    return [set(np.nonzero(row)[0].tolist()) for row in M]


def allocate_rbs(links: list, conflicts: list[set[int]], n_rbs: int,
                 forbidden: list[set[int]] | None = None) -> list[int]:
    """Largest-degree-first greedy colouring; colour k maps to RB ``k mod n_rbs``.

    ``forbidden[a]`` holds RBs link ``a`` may not use (reserved by nearby
    cellular users); they are skipped unless every RB is forbidden.
    """
    if n_rbs < 1:
        raise ValueError("n_rbs must be >= 1")
    n = len(links)
    order = sorted(range(n), key=lambda a: (-len(conflicts[a]), a))
    color = [-1] * n
    for a in order:
        used = {color[b] for b in conflicts[a] if color[b] >= 0}
        bad = forbidden[a] if forbidden else set()
        if len(bad) >= n_rbs:
            bad = set()
        k = 0
        while k in used or (k % n_rbs) in bad:
            k += 1
        color[a] = k
    return [k % n_rbs for k in color]


def _raw_social(i, j, comms: CommunityStructure | None, gp: ContactGraph | None, ctx) -> tuple[str, float]:
    ci = comms.community_of(i) if comms is not None else None
    cj = comms.community_of(j) if comms is not None else None
    cls = gp.edge_class(i, j) if gp is not None else None
    if ci is not None and ci == cj:
        if cls is EdgeClass.SUSTAINABLE:
            return "i", ctx["rule1"][ci]
        return "ii", ctx["rule2"]
    inter = None
    if ci is not None and cj is not None:
        inter = ctx["inter"].get((min(ci, cj), max(ci, cj)))
    if inter is None:
        return "iii_max", math.nan
    lo, hi = inter
    ref = hi if ctx["p"].rule3_use_max else lo
    if ref <= 0:
        # a zero-weight edge (possible after min-max scaling) gives an unbounded weight
        return ("iv_max" if cls is EdgeClass.SUSTAINABLE else "iii_max"), math.nan
    base = ctx["p"].rule3_scale / ref
    if cls is EdgeClass.SUSTAINABLE:
        return "iv", ctx["p"].rule4_factor * base
    return "iii", base


def social_context(comms: CommunityStructure | None, gp: ContactGraph | None,
                   params: RelayParams | None = None) -> dict:
    """Per-community constants used by the weight rules (computed once per structure)."""
    p = params or RelayParams()
    rule1 = {}
    inter: dict[tuple[int, int], tuple[float, float]] = {}
    if comms is not None and gp is not None:
        w_int = [0.0] * comms.k
        for (u, v), e in gp.edges.items():
            cu, cv = comms.community_of(u), comms.community_of(v)
            if cu is None or cv is None:
                continue
            if cu == cv:
                w_int[cu] += e.weight
            else:
                key = (min(cu, cv), max(cu, cv))
                lo, hi = inter.get(key, (math.inf, -math.inf))
                inter[key] = (min(lo, e.weight), max(hi, e.weight))
        for k, w in enumerate(w_int):
            if w > 0:
                rule1[k] = p.rule1_scale / w
    rule2 = p.rule2_factor * (max(rule1.values()) if rule1 else 1.0)
    return {"rule1": rule1, "rule2": rule2, "inter": inter, "p": p}


def social_weight(i, j, comms: CommunityStructure | None, gp: ContactGraph | None,
                  params: RelayParams | None = None, ctx: dict | None = None) -> tuple[str, float]:
    """Raw (unnormalised) social weight of pair (i, j) and the rule that produced it.

    The rule-(iii) fallback for communities with no connecting contact edge is
    reported as ``("iii_max", nan)``; :func:`social_weights` resolves it to the
    largest weight in the graph.
    """
    ctx = ctx or social_context(comms, gp, params)
    return _raw_social(i, j, comms, gp, ctx)


def social_weights(pairs: Iterable[tuple[int, int]], comms: CommunityStructure | None,
                   gp: ContactGraph | None, params: RelayParams | None = None,
                   ctx: dict | None = None) -> tuple[dict, dict]:
    """Normalised social weights in [0, 1] over ``pairs`` plus the rule label per pair."""
    ctx = ctx or social_context(comms, gp, params)
    pairs = list(pairs)
    raw, rule = {}, {}
    for e in pairs:
        rule[e], raw[e] = _raw_social(e[0], e[1], comms, gp, ctx)
    finite = [v for v in raw.values() if not math.isnan(v)]
    w_max = max(finite) if finite else 1.0
    for e in pairs:
        if math.isnan(raw[e]):
            raw[e] = w_max
    if not raw:
        return {}, rule
    vals = np.array(list(raw.values()))
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo > 1e-15 * max(hi, 1.0):
        norm = {e: (v - lo) / (hi - lo) for e, v in raw.items()}
    else:
        norm = {e: (1.0 if hi > 0 else 0.0) for e in raw}
    return norm, rule


def cellular_users(seed: int, n: int, arena: tuple[float, float]) -> np.ndarray:
    rng = np.random.default_rng([int(seed), 7919])
    return np.column_stack([rng.uniform(0, arena[0], n), rng.uniform(0, arena[1], n)])


@dataclass
class RadioSnapshot:
    """Size-independent radio state at one instant: links, RBs, SINR, cost."""

    t: float
    positions: dict[int, np.ndarray]
    links: list[tuple[int, int]]
    rbs: list[int]
    sinr: np.ndarray
    distance: np.ndarray
    power: np.ndarray  # received power, i.e. the raw incentive cost
    cochannel: dict[tuple[int, int], tuple]
    b2d: dict[int, float]
    fading: FadingField
    channel: ChannelParams
    bs_position: tuple[float, float]

    def adjacency(self, sinr_screen: bool = True) -> set[tuple[int, int]]:
        thr = self.channel.sinr_threshold_linear
        return {e for a, e in enumerate(self.links) if not sinr_screen or self.sinr[a] >= thr}


def radio_snapshot(positions: dict[int, np.ndarray], t: float, channel: ChannelParams,
                   relay: RelayParams | None = None, fading: FadingField | None = None,
                   cue_positions: np.ndarray | None = None,
                   bs_position: tuple[float, float] = (500.0, 500.0)) -> RadioSnapshot:
    """In-range links, conflict colouring, and per-link SINR with every co-channel link active."""
    rp = relay or RelayParams()
    fading = fading or FadingField(0, channel)
    links = in_range_pairs(positions, channel.d_max)
    radius = rp.conflict_factor * channel.d_max
    conflicts = conflict_sets(links, positions, radius)

    cue_rbs: set[int] = set()
    forbidden = None
    if cue_positions is not None and len(cue_positions) and links:
        cue = np.asarray(cue_positions, dtype=float)[: rp.n_cellular]
        cue_rbs = set(range(len(cue)))
        txy = np.array([positions[i] for i, _ in links], dtype=float)
        rxy = np.array([positions[j] for _, j in links], dtype=float)
        near = ((np.hypot(*(txy[:, None, :] - cue[None]).transpose(2, 0, 1)) <= radius)
                | (np.hypot(*(rxy[:, None, :] - cue[None]).transpose(2, 0, 1)) <= radius))
        forbidden = [set(np.nonzero(row)[0].tolist()) for row in near]
    rbs = allocate_rbs(links, conflicts, rp.n_rbs, forbidden)
    if not rp.include_bs_interference:
        cue_rbs = set()

    n = len(links)
    tx = np.array([i for i, _ in links], dtype=np.int64)
    rx = np.array([j for _, j in links], dtype=np.int64)
    txy = np.array([positions[i] for i in tx], dtype=float).reshape(n, 2)
    rxy = np.array([positions[j] for j in rx], dtype=float).reshape(n, 2)
    dist = np.hypot(*(txy - rxy).T) if n else np.zeros(0)
    alpha = channel.pathloss_exponent
    power = channel.device_tx_power * dist ** -alpha * fading.gains(tx, rx) if n else np.zeros(0)
    interf = np.zeros(n)
    cochannel: dict = {}
    bs = np.asarray(bs_position, dtype=float)
    rb_arr = np.array(rbs, dtype=np.int64)
    for z in sorted(set(rbs)):
        members = np.nonzero(rb_arr == z)[0]
        txs = np.unique(tx[members])
        ktx = np.array([positions[k] for k in txs], dtype=float)
        for a in members:
            mask = (txs != tx[a]) & (txs != rx[a])
            others = txs[mask]
            if len(others):
                dk = np.hypot(*(ktx[mask] - rxy[a]).T)
                interf[a] = float(np.sum(channel.device_tx_power * dk ** -alpha
                                         * fading.gains(others, np.full(len(others), rx[a]))))
            names = tuple(int(k) for k in others)
            if z in cue_rbs:
                dk = max(float(np.hypot(*(bs - rxy[a]))), 1.0)
                interf[a] += channel.bs_tx_power * dk ** -alpha * float(fading.gains([-1], [rx[a]])[0])
                names += (BS,)
            cochannel[links[a]] = names
    sinr = power / (interf + channel.noise_power) if n else np.zeros(0)

    ids = sorted(positions)
    xy = np.array([positions[u] for u in ids], dtype=float)
    d_bs = np.maximum(np.hypot(*(xy - bs).T), 1.0)
    p_bs = channel.bs_tx_power * d_bs ** -alpha * fading.gains(np.full(len(ids), -1), np.array(ids))
    b2d = {u: float(channel.b2d_scale / p_bs[k]) for k, u in enumerate(ids)}
    return RadioSnapshot(t, {u: np.asarray(p, dtype=float) for u, p in positions.items()}, links, rbs,
                         sinr, dist, power, cochannel, b2d, fading, channel, tuple(bs_position))


def assemble_from_snapshot(snap: RadioSnapshot, s: int, r: int, b: float, t_max: float,
                           communities: CommunityStructure | None, contact_graph: ContactGraph | None,
                           relay: RelayParams | None = None, social_ctx: dict | None = None,
                           sinr_screen: bool = True) -> RelayGraph:
    """Relay graph for a content of ``b`` bits: delays, normalised cost, social weight."""
    rp = relay or RelayParams()
    ch = snap.channel
    thr = ch.sinr_threshold_linear
    kept: dict[tuple[int, int], dict] = {}
    for a, e in enumerate(snap.links):
        g = float(snap.sinr[a])
        if sinr_screen and g < thr:
            continue
        rt = rate(g, ch)
        if rt <= 0:
            continue
        d = float(snap.distance[a])
        kept[e] = {"sinr": g, "d": d, "rate": rt, "t": hop_delay(d, b, rt, ch), "c": float(snap.power[a]),
                   "rb": snap.rbs[a]}
    c_max = max((v["c"] for v in kept.values()), default=1.0)
    W, _ = social_weights(kept.keys(), communities, contact_graph, rp, social_ctx)
    edges = {}
    for e, v in kept.items():
        c_n = v["c"] / c_max
        edges[e] = RelayEdge(v["c"], c_n, W[e], W[e] + c_n, v["t"], v["rb"], v["sinr"], v["rate"], v["d"])
    cochannel = {e: snap.cochannel[e] for e in edges}
    return RelayGraph(tuple(sorted(snap.positions)), edges, s, r, snap.t, b, t_max, dict(snap.b2d),
                      snap.positions, cochannel, snap.fading, ch, snap.bs_position)


def assemble(trace: MobilityTrace, t: float, s: int, r: int, b: float, t_max: float,
             communities: CommunityStructure | None, contact_graph: ContactGraph | None,
             channel: ChannelParams, relay: RelayParams | None = None,
             fading: FadingField | None = None, cue_positions: np.ndarray | None = None,
             social_ctx: dict | None = None, sinr_screen: bool = True) -> RelayGraph:
    """Build the relay graph for a request from ``r`` served by ``s`` at time ``t``."""
    return assemble_from_positions(trace.snapshot(t), t, s, r, b, t_max, communities, contact_graph,
                                   channel, relay, fading, cue_positions, social_ctx, sinr_screen,
                                   bs_position=(trace.arena[0] / 2, trace.arena[1] / 2))


def assemble_from_positions(positions: dict[int, np.ndarray], t: float, s: int, r: int, b: float,
                            t_max: float, communities, contact_graph, channel: ChannelParams,
                            relay: RelayParams | None = None, fading: FadingField | None = None,
                            cue_positions: np.ndarray | None = None, social_ctx: dict | None = None,
                            sinr_screen: bool = True,
                            bs_position: tuple[float, float] = (500.0, 500.0)) -> RelayGraph:
    snap = radio_snapshot(positions, t, channel, relay, fading, cue_positions, bs_position)
    return assemble_from_snapshot(snap, s, r, b, t_max, communities, contact_graph, relay, social_ctx,
                                  sinr_screen)


def link_sinr_at(i, j, interferers, positions, fading: FadingField, channel: ChannelParams,
                 bs_position) -> tuple[float, float]:
    """(SINR, distance) of link i->j given co-channel transmitters and current positions."""
    pi, pj = np.asarray(positions[i]), np.asarray(positions[j])
    d = float(math.hypot(*(pi - pj)))
    p_rx = received_power(channel.device_tx_power, d, fading(i, j), channel)
    interf = 0.0
    for k in interferers:
        if k == BS:
            dk = float(math.hypot(*(np.asarray(bs_position) - pj)))
            interf += received_power(channel.bs_tx_power, max(dk, 1.0), fading(BS, j), channel)
        else:
            dk = float(math.hypot(*(np.asarray(positions[k]) - pj)))
            interf += received_power(channel.device_tx_power, dk, fading(k, j), channel)
    return p_rx / (interf + channel.noise_power), d


def build_adjacency(trace: MobilityTrace, t: float, channel: ChannelParams, relay: RelayParams | None = None,
                    fading: FadingField | None = None, sinr_screen: bool = True,
                    cue_positions: np.ndarray | None = None) -> set[tuple[int, int]]:
    """Directed D2D edges present at ``t`` (after RB allocation and, optionally, SINR screening)."""
    snap = radio_snapshot(trace.snapshot(t), t, channel, relay, fading, cue_positions,
                          (trace.arena[0] / 2, trace.arena[1] / 2))
    return snap.adjacency(sinr_screen)
