"""Session replay: request -> relay graph -> path choice -> hop-by-hop delivery
with mobility monitoring and base-station fallback, plus the MC and CD baselines."""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rpf as solver
from .channel import ChannelParams, FadingField
from .community import CommunityStructure, dcd
from .mobility import MobilityParams, MobilityTrace, extract_encounters, generate_trace
from .relaygraph import (RelayGraph, RelayParams, assemble, assemble_from_snapshot, cellular_users,
                         link_sinr_at, radio_snapshot, social_context)
from .rpf import Decision, NoFeasiblePath, RelayPath, decide_delivery, make_path
from .social import ContactGraph, SocialParams, build_contact_graph, nominal_transfer_time

DELIVERED = "DeliveredD2D"
FALLBACK = "FellBackToB2D"
NO_PATH = "NoFeasiblePath"
TOO_COSTLY = "CostExceedsB2D"
TEARDOWN = "MobilityTeardown"
METHODS = ("rpf", "mc", "cd")


@dataclass(frozen=True)
class RequestEvent:
    t: float
    r: int
    s: int | None  # None: no device holds the content
    b: float  # bits
    t_max: float

    def with_size(self, b: float) -> "RequestEvent":
        return RequestEvent(self.t, self.r, self.s, b, self.t_max)


@dataclass
class SessionOutcome:
    outcome: str
    reason: str = ""
    elapsed: float = 0.0
    bs_cost: float = 0.0
    hops: int = 0
    path: tuple = ()
    path_cost: float = math.nan  # incentive cost of the chosen path before transmission

    @property
    def delivered(self) -> bool:
        return self.outcome == DELIVERED


# --------------------------------------------------------------------------
# baselines
# --------------------------------------------------------------------------

def baseline_mc(graph: RelayGraph, **kw) -> RelayPath:
    """Cheapest incentive cost within the delay budget; social weights ignored."""
    path = solver.rpf(graph.with_weights(lambda e: e.c), **kw)
    return make_path(graph, path.nodes)


def baseline_cd(graph: RelayGraph, trace: MobilityTrace | None = None, t: float | None = None) -> RelayPath:
    """Greedy walk that always steps to the unvisited neighbour closest to ``r``."""
    pos = graph.positions if trace is None else trace.snapshot(graph.t if t is None else t)
    target = np.asarray(pos[graph.r])
    succ = graph.successors()
    path = [graph.s]
    seen = {graph.s}
    delay = 0.0
    while path[-1] != graph.r:
        u = path[-1]
        cand = [v for v in succ.get(u, ()) if v not in seen]
        if not cand:
            raise NoFeasiblePath(f"greedy walk stuck at {u}")
        v = min(cand, key=lambda x: (float(np.hypot(*(np.asarray(pos[x]) - target))), x))
        delay += graph.edges[(u, v)].t
        if delay > graph.t_max * (1 + 1e-12):
            raise NoFeasiblePath("greedy walk exceeds the delay budget")
        path.append(v)
        seen.add(v)
    return make_path(graph, path)


def select_path(graph: RelayGraph, method: str, trace: MobilityTrace | None = None,
                cut_mode: str = "partition") -> RelayPath | None:
    try:
        if method == "rpf":
            return solver.rpf(graph, cut_mode=cut_mode)
        if method == "mc":
            return baseline_mc(graph, cut_mode=cut_mode)
        if method == "cd":
            return baseline_cd(graph, trace)
    except NoFeasiblePath:
        return None
    except solver.CappedSearchError as exc:
        return exc.best
    raise ValueError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# one session
# --------------------------------------------------------------------------

def hop_alive(graph: RelayGraph, i: int, j: int, positions: dict, channel: ChannelParams) -> bool:
    """Hop still inside range and above the SINR threshold at the given positions."""
    sinr, d = link_sinr_at(i, j, graph.cochannel.get((i, j), ()), positions, graph.fading, channel,
                           graph.bs_position)
    return d <= channel.d_max and sinr >= channel.sinr_threshold_linear


def transmit(graph: RelayGraph, path: RelayPath, trace: MobilityTrace, channel: ChannelParams) -> tuple[bool, float]:
    """Store-and-forward replay of ``path`` from ``graph.t``.

    Returns (delivered, elapsed). Each hop is checked at every tick it is
    active, with fading frozen at the values used to build the graph.
    """
    t = graph.t
    dt = trace.tick_duration
    for i, j in path.edges():
        dur = graph.edges[(i, j)].t
        k0 = trace.tick_of(t)
        k = k0 if trace.t0 + k0 * dt >= t - 1e-9 else k0 + 1
        while trace.t0 + k * dt < t + dur - 1e-9:
            if k >= trace.n_ticks:
                return False, trace.t0 + k * dt - graph.t
            if not hop_alive(graph, i, j, trace.snapshot(trace.t0 + k * dt), channel):
                return False, trace.t0 + k * dt - graph.t
            k += 1
        t += dur
    return True, t - graph.t


def run_session(event: RequestEvent, trace: MobilityTrace, communities: CommunityStructure | None,
                contact_graph: ContactGraph | None, method: str, channel: ChannelParams,
                relay: RelayParams | None = None, fading: FadingField | None = None,
                cue_positions: np.ndarray | None = None, graph: RelayGraph | None = None,
                cut_mode: str = "partition", social_ctx: dict | None = None) -> SessionOutcome:
    """Serve one request with ``method`` and replay it against the trace."""
    fading = fading or FadingField(0, channel)
    if graph is None and event.s is not None:
        graph = assemble(trace, event.t, event.s, event.r, event.b, event.t_max, communities,
                         contact_graph, channel, relay, fading, cue_positions, social_ctx)
    if event.s is None:
        # nobody holds the content: serve from the BS straight away
        g = graph or assemble(trace, event.t, -1, event.r, event.b, event.t_max, None, None, channel,
                              relay, fading, cue_positions)
        return SessionOutcome(FALLBACK, NO_PATH, 0.0, g.b2d[event.r])
    b2d = graph.b2d[event.r]
    path = select_path(graph, method, trace, cut_mode)
    decision: Decision = decide_delivery(path, b2d)
    if decision.kind == "B2D":
        return SessionOutcome(FALLBACK, decision.reason, 0.0, b2d, 0,
                              path.nodes if path else (), path.total_bs_cost if path else math.nan)
    ok, elapsed = transmit(graph, path, trace, channel)
    if ok:
        return SessionOutcome(DELIVERED, "", elapsed, path.total_bs_cost, path.hops, path.nodes,
                              path.total_bs_cost)
    return SessionOutcome(FALLBACK, TEARDOWN, elapsed, b2d, path.hops, path.nodes, path.total_bs_cost)


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

@dataclass
class SimSettings:
    """Everything one seed of an experiment needs."""

    n_devices: int = 140
    arena: tuple[float, float] = (1000.0, 1000.0)
    mining_hours: float = 3.0
    replay_hours: float = 1.0
    content_bits: tuple[float, ...] = (1.2e6, 4.56e6, 8.0e6)
    t_max: float = 100.0
    sessions: int = 20
    methods: tuple[str, ...] = METHODS
    tod_half_width: float | None = None  # s; None disables the time-of-day filter
    request_filter: str = "reachable"  # or "any"
    request_max_distance: float | None = None
    cut_mode: str = "partition"
    dcd_perturbations: int = 30
    channel: ChannelParams = field(default_factory=ChannelParams)
    # raw (unscaled) contact weights; see README for why
    social: SocialParams = field(default_factory=lambda: SocialParams(normalize_w=False))
    relay: RelayParams = field(default_factory=RelayParams)
    mobility: MobilityParams = field(default_factory=MobilityParams)

    def __post_init__(self):
        if self.request_filter not in ("reachable", "any"):
            raise ValueError("request_filter must be 'reachable' or 'any'")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if self.t_max <= 0:
            raise ValueError("t_max must be > 0")
        if self.sessions < 1:
            raise ValueError("sessions must be >= 1")


def _reachable_from(adj: set, s: int) -> set:
    succ: dict = {}
    for i, j in adj:
        succ.setdefault(i, []).append(j)
    seen = {s}
    q = deque([s])
    while q:
        u = q.popleft()
        for v in succ.get(u, ()):
            if v not in seen:
                seen.add(v)
                q.append(v)
    return seen


def generate_requests(seed: int, trace: MobilityTrace, settings: SimSettings, t_start: float,
                      fading_seed: int, cue_positions: np.ndarray) -> list[RequestEvent]:
    """Request times uniform over the replay window; (s, r) uniform over eligible pairs."""
    return [ev for ev, _ in _requests_with_snapshots(seed, trace, settings, t_start, fading_seed, cue_positions)]


def _requests_with_snapshots(seed, trace, settings, t_start, fading_seed, cue_positions):
    rng = np.random.default_rng([seed, 101])
    ch = settings.channel
    bs = (trace.arena[0] / 2, trace.arena[1] / 2)
    last = trace.t_end - settings.t_max - 2 * trace.tick_duration
    if last <= t_start:
        raise ValueError("replay window shorter than t_max")
    out = []
    attempts = 0
    while len(out) < settings.sessions:
        attempts += 1
        if attempts > 50 * settings.sessions:
            raise RuntimeError("could not find enough eligible request pairs")
        t = float(trace.t0 + trace.tick_of(rng.uniform(t_start, last)) * trace.tick_duration)
        xy = trace.positions[trace.tick_of(t)]
        ids = trace.node_ids
        d = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
        ok = d > ch.d_max
        if settings.request_max_distance is not None:
            ok &= d <= settings.request_max_distance
        snap = radio_snapshot(trace.snapshot(t), t, ch, settings.relay,
                              FadingField(fading_seed + len(out), ch), cue_positions, bs)
        if settings.request_filter == "reachable":
            adj = snap.adjacency()
            reach = np.zeros_like(ok)
            for a in range(len(ids)):
                for v in _reachable_from(adj, int(ids[a])):
                    reach[a, trace.index_of(v)] = True
            ok &= reach
        np.fill_diagonal(ok, False)
        pairs = np.argwhere(ok)
        if not len(pairs):
            continue
        a, c = pairs[int(rng.integers(len(pairs)))]
        out.append((RequestEvent(t, int(ids[c]), int(ids[a]), 0.0, settings.t_max), snap))
    return out


def mine_communities(trace: MobilityTrace, window: tuple[float, float], b: float,
                     settings: SimSettings, seed: int, center: float | None = None):
    hist = extract_encounters(trace, settings.channel.d_max, window)
    if settings.tod_half_width is not None and center is not None:
        hist = hist.filter_time_of_day(center, settings.tod_half_width)
    t_c = nominal_transfer_time(b, settings.channel)
    gp = build_contact_graph(hist, t_c, settings.social, span=window[1] - window[0])
    return gp, dcd(gp, seed, perturbations=settings.dcd_perturbations)


@dataclass
class SessionRecord:
    method: str
    seed: int
    session_id: int
    content_bits: float
    outcome: str
    reason: str
    elapsed_s: float
    hops: int
    bs_cost: float
    path_cost: float


def run_seed(seed: int, settings: SimSettings, trace: MobilityTrace | None = None) -> list[SessionRecord]:
    """All sessions of one seed, for every content size and method."""
    mine_s = settings.mining_hours * 3600.0
    horizon = mine_s + settings.replay_hours * 3600.0
    if trace is None:
        trace = generate_trace(seed, settings.n_devices, settings.arena, horizon, settings.mobility)
    ch = settings.channel
    cues = cellular_users(seed, settings.relay.n_cellular, trace.arena)
    fseed = seed * 100_003
    requests = _requests_with_snapshots(seed, trace, settings, trace.t0 + mine_s, fseed, cues)
    window = (trace.t0, trace.t0 + mine_s)
    hist = extract_encounters(trace, ch.d_max, window)
    records = []
    for b in settings.content_bits:
        t_c = nominal_transfer_time(b, ch)
        cache: dict = {}

        def social_for(t):
            key = None if settings.tod_half_width is None else round((t % 86400.0) / 3600.0)
            if key not in cache:
                h = hist if key is None else hist.filter_time_of_day(key * 3600.0, settings.tod_half_width)
                gp = build_contact_graph(h, t_c, settings.social, span=mine_s)
                comms = dcd(gp, seed, perturbations=settings.dcd_perturbations)
                cache[key] = (gp, comms, social_context(comms, gp, settings.relay))
            return cache[key]

        for sid, (ev0, snap) in enumerate(requests):
            ev = ev0.with_size(b)
            gp, comms, ctx = social_for(ev.t)
            graph = assemble_from_snapshot(snap, ev.s, ev.r, b, ev.t_max, comms, gp, settings.relay, ctx)
            for m in settings.methods:
                out = run_session(ev, trace, comms, gp, m, ch, settings.relay, snap.fading, cues, graph,
                                  settings.cut_mode)
                records.append(SessionRecord(m, seed, sid, b, out.outcome, out.reason, out.elapsed,
                                             out.hops, out.bs_cost, out.path_cost))
    return records


@dataclass
class MethodStats:
    sessions: int
    delivered: int
    delivery_rate: float
    delivery_rate_se: float
    active_b2d_links: float
    active_b2d_links_se: float
    total_bs_cost: float
    fallbacks: dict


@dataclass
class SimReport:
    per_size: dict  # content bits -> method -> MethodStats
    seeds: list
    cost_normalizer: float
    parameters: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=str)

    def rate(self, b: float, method: str) -> float:
        return self.per_size[b][method].delivery_rate

    def b2d(self, b: float, method: str) -> float:
        return self.per_size[b][method].active_b2d_links


def _mean_se(xs) -> tuple[float, float]:
    a = np.asarray(xs, dtype=float)
    if len(a) < 2:
        return float(a.mean()) if len(a) else math.nan, 0.0
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a)))


def summarize(records: list[SessionRecord], parameters: dict | None = None) -> SimReport:
    """Aggregate session records. ``active_b2d_links`` is the mean per seed of
    sessions that ended on a B2D link; BS cost is normalised by the largest
    per-(size, method) total."""
    seeds = sorted({r.seed for r in records})
    sizes = sorted({r.content_bits for r in records})
    methods = [m for m in METHODS if any(r.method == m for r in records)]
    totals = {}
    for b in sizes:
        for m in methods:
            totals[(b, m)] = math.fsum(r.bs_cost for r in records if r.content_bits == b and r.method == m)
    norm = max(totals.values(), default=1.0) or 1.0
    per_size: dict = {}
    for b in sizes:
        per_size[b] = {}
        for m in methods:
            rs = [r for r in records if r.content_bits == b and r.method == m]
            by_seed = {s: [r for r in rs if r.seed == s] for s in seeds}
            rates = [sum(r.outcome == DELIVERED for r in v) / len(v) for v in by_seed.values() if v]
            b2ds = [sum(r.outcome == FALLBACK for r in v) for v in by_seed.values() if v]
            delivered = sum(r.outcome == DELIVERED for r in rs)
            reasons: dict = {}
            for r in rs:
                if r.outcome == FALLBACK:
                    reasons[r.reason] = reasons.get(r.reason, 0) + 1
            mr, mr_se = _mean_se(rates)
            mb, mb_se = _mean_se(b2ds)
            per_size[b][m] = MethodStats(len(rs), delivered, delivered / len(rs) if rs else math.nan, mr_se,
                                         mb, mb_se, totals[(b, m)] / norm, dict(sorted(reasons.items())))
    return SimReport(per_size, seeds, norm, parameters or {})


def _run_seed_star(args):
    return run_seed(*args)


def run_experiment(settings: SimSettings, seeds, jobs: int = 1) -> tuple[list[SessionRecord], SimReport]:
    """Run every seed (optionally in worker processes) and merge in seed order."""
    seeds = list(seeds)
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_run_seed_star, [(s, settings) for s in seeds]))
    else:
        parts = [run_seed(s, settings) for s in seeds]
    records = [r for part in parts for r in part]
    return records, summarize(records)


RESULT_COLUMNS = ["method", "seed", "session_id", "outcome", "reason", "elapsed_s", "hops", "bs_cost",
                  "content_bits"]


def write_results_csv(records: list[SessionRecord], path: str | Path, header_lines=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(RESULT_COLUMNS)
        for r in records:
            wr.writerow([r.method, r.seed, r.session_id, r.outcome, r.reason, f"{r.elapsed_s:.6f}", r.hops,
                         repr(r.bs_cost), repr(r.content_bits)])
