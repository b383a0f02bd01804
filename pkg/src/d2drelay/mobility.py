"""Device positions over time: trace container, CSV ingestion, a clustered
waypoint generator, and pairwise encounter extraction.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

TRACE_HEADER = ["time_s", "node_id", "x_m", "y_m"]


class TraceFormatError(ValueError):
    """Malformed trace file; ``rows`` lists the offending 1-based data row numbers."""

    def __init__(self, message: str, rows: Iterable[int] = ()):
        self.rows = sorted(set(rows))
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:10])
            message = f"{message} (rows {shown}{', ...' if len(self.rows) > 10 else ''})"
        super().__init__(message)


@dataclass
class MobilityTrace:
    """Positions of every device at every tick.

    ``positions[k, i]`` is the (x, y) of ``node_ids[i]`` at ``t0 + k * tick_duration``.
    """

    tick_duration: float
    positions: np.ndarray
    node_ids: np.ndarray
    arena: tuple[float, float] = (1000.0, 1000.0)
    t0: float = 0.0
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.node_ids = np.asarray(self.node_ids, dtype=int)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError("positions must have shape (ticks, devices, 2)")
        if self.positions.shape[1] != len(self.node_ids):
            raise ValueError("node_ids length does not match positions")
        if self.tick_duration <= 0:
            raise ValueError("tick_duration must be > 0")
        w, h = self.arena
        xs, ys = self.positions[..., 0], self.positions[..., 1]
        if xs.size and (xs.min() < 0 or ys.min() < 0 or xs.max() > w or ys.max() > h):
            raise ValueError("positions outside the arena")
        self._index = {int(n): i for i, n in enumerate(self.node_ids)}

    @property
    def n_ticks(self) -> int:
        return self.positions.shape[0]

    @property
    def n_devices(self) -> int:
        return self.positions.shape[1]

    @property
    def horizon(self) -> float:
        return self.n_ticks * self.tick_duration

    @property
    def t_end(self) -> float:
        return self.t0 + self.horizon

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_ticks) * self.tick_duration

    def index_of(self, node: int) -> int:
        return self._index[int(node)]

    def tick_of(self, t: float) -> int:
        k = int(math.floor((t - self.t0) / self.tick_duration + 1e-9))
        if not 0 <= k < self.n_ticks:
            raise IndexError(f"time {t} outside trace [{self.t0}, {self.t_end})")
        return k

    def position(self, node: int, t: float) -> np.ndarray:
        return self.positions[self.tick_of(t), self.index_of(node)]

    def snapshot(self, t: float) -> dict[int, np.ndarray]:
        row = self.positions[self.tick_of(t)]
        return {int(n): row[i] for i, n in enumerate(self.node_ids)}

    def without(self, nodes: Iterable[int]) -> "MobilityTrace":
        drop = {int(n) for n in nodes}
        keep = [i for i, n in enumerate(self.node_ids) if int(n) not in drop]
        return MobilityTrace(self.tick_duration, self.positions[:, keep], self.node_ids[keep],
                             self.arena, self.t0)

    def window(self, t_a: float, t_b: float) -> "MobilityTrace":
        ka, kb = self.tick_of(t_a), int(round((t_b - self.t0) / self.tick_duration))
        return MobilityTrace(self.tick_duration, self.positions[ka:kb], self.node_ids, self.arena,
                             self.t0 + ka * self.tick_duration)


@dataclass(frozen=True)
class Encounter:
    u: int
    v: int
    start: float
    duration: float


@dataclass
class EncounterHistory:
    """Per-pair, time-ordered encounters observed inside ``[t_a, t_b)``."""

    encounters: dict[tuple[int, int], list[Encounter]]
    t_a: float
    t_b: float
    nodes: tuple[int, ...] = ()

    @property
    def span(self) -> float:
        return self.t_b - self.t_a

    def pairs(self):
        return sorted(self.encounters)

    def durations(self, u: int, v: int) -> list[float]:
        key = (u, v) if u < v else (v, u)
        return [e.duration for e in self.encounters.get(key, [])]

    def __len__(self):
        return sum(len(v) for v in self.encounters.values())

    def filter_time_of_day(self, center: float, half_width: float, day: float = 86400.0) -> "EncounterHistory":
        """Keep encounters whose start falls within ``center +/- half_width`` on the daily clock."""
        kept = {}
        for key, encs in self.encounters.items():
            sel = []
            for e in encs:
                off = (e.start - center) % day
                if min(off, day - off) <= half_width:
                    sel.append(e)
            if sel:
                kept[key] = sel
        return EncounterHistory(kept, self.t_a, self.t_b, self.nodes)


def distance(trace: MobilityTrace, u: int, v: int, t: float) -> float:
    k = trace.tick_of(t)
    a = trace.positions[k, trace.index_of(u)]
    b = trace.positions[k, trace.index_of(v)]
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


def extract_encounters(trace: MobilityTrace, d_max: float, window: tuple[float, float] | None = None,
                       chunk: int = 256) -> EncounterHistory:
    """Turn every maximal run of in-range ticks into one encounter.

    Runs cut by the window edges are truncated to the window.
    """
    t_a, t_b = (trace.t0, trace.t_end) if window is None else window
    if t_a < trace.t0 - 1e-9 or t_b > trace.t_end + 1e-9 or t_b < t_a:
        raise ValueError("window must lie within the trace horizon")
    tick = trace.tick_duration
    ka = int(round((t_a - trace.t0) / tick))
    kb = int(round((t_b - trace.t0) / tick))
    n = trace.n_devices
    iu, iv = np.triu_indices(n, k=1)
    d2 = d_max * d_max
    prev = np.zeros(len(iu), dtype=bool)
    start_t, start_p, end_t, end_p = [], [], [], []
    for k0 in range(ka, kb, chunk):
        k1 = min(k0 + chunk, kb)
        pos = trace.positions[k0:k1]
        dx = pos[:, iu, 0] - pos[:, iv, 0]
        dy = pos[:, iu, 1] - pos[:, iv, 1]
        inr = dx * dx + dy * dy <= d2
        stacked = np.vstack([prev[None, :], inr])
        step = np.diff(stacked.astype(np.int8), axis=0)
        t_s, p_s = np.nonzero(step == 1)
        t_e, p_e = np.nonzero(step == -1)
        start_t.append(t_s + k0)
        start_p.append(p_s)
        end_t.append(t_e + k0)
        end_p.append(p_e)
        prev = inr[-1]
    # close runs still open at the window end
    p_open = np.nonzero(prev)[0]
    end_t.append(np.full(len(p_open), kb))
    end_p.append(p_open)
    st, sp = np.concatenate(start_t), np.concatenate(start_p)
    et, ep = np.concatenate(end_t), np.concatenate(end_p)
    so = np.lexsort((st, sp))
    eo = np.lexsort((et, ep))
    st, sp, et, ep = st[so], sp[so], et[eo], ep[eo]
    assert np.array_equal(sp, ep)
    ids = trace.node_ids
    encounters: dict[tuple[int, int], list[Encounter]] = defaultdict(list)
    for s, e, p in zip(st.tolist(), et.tolist(), sp.tolist()):
        a, b = int(ids[iu[p]]), int(ids[iv[p]])
        if a > b:
            a, b = b, a
        encounters[(a, b)].append(Encounter(a, b, trace.t0 + s * tick, (e - s) * tick))
    for encs in encounters.values():
        encs.sort(key=lambda e: e.start)
    return EncounterHistory(dict(encounters), t_a, t_b, tuple(int(x) for x in ids))


def load_trace(path: str | Path, arena: tuple[float, float] | None = None) -> MobilityTrace:
    """Read a ``time_s,node_id,x_m,y_m`` CSV; lines starting with ``#`` are skipped.

    Without an explicit arena, coordinates must be non-negative and the arena
    is taken as the bounding box of the data.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRACE_HEADER:
            raise TraceFormatError(f"expected header {','.join(TRACE_HEADER)}, got {header}")
        bad = []
        for rownum, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                t, node, x, y = float(rec[0]), int(rec[1]), float(rec[2]), float(rec[3])
            except (ValueError, IndexError):
                bad.append(rownum)
                continue
            if not all(math.isfinite(v) for v in (t, x, y)):
                bad.append(rownum)
                continue
            rows.append((rownum, t, node, x, y))
    if bad:
        raise TraceFormatError("unparseable row", bad)
    if not rows:
        raise TraceFormatError("trace has no data rows")
    w, h = arena if arena is not None else (max(r[3] for r in rows), max(r[4] for r in rows))
    oob = [r[0] for r in rows if not (0 <= r[3] <= w and 0 <= r[4] <= h)]
    if oob:
        raise TraceFormatError("coordinate out of arena bounds", oob)
    seen: dict[tuple[float, int], int] = {}
    dup = []
    last_t: dict[int, float] = {}
    nonmono = []
    for rownum, t, node, _, _ in rows:
        if (t, node) in seen:
            dup.append(rownum)
            continue
        seen[(t, node)] = rownum
        if node in last_t and t <= last_t[node]:
            nonmono.append(rownum)
        last_t[node] = t
    if dup:
        raise TraceFormatError("duplicate (time, node) key", dup)
    if nonmono:
        raise TraceFormatError("non-monotone time for node", nonmono)
    times = sorted({r[1] for r in rows})
    nodes = sorted({r[2] for r in rows})
    if len(times) > 1:
        steps = np.diff(times)
        tick = float(steps[0])
        if tick <= 0 or not np.allclose(steps, tick, rtol=1e-9, atol=1e-9):
            raise TraceFormatError("time stamps are not on a uniform tick grid")
    else:
        tick = 1.0
    t_index = {t: k for k, t in enumerate(times)}
    n_index = {n: i for i, n in enumerate(nodes)}
    pos = np.full((len(times), len(nodes), 2), np.nan)
    for _, t, node, x, y in rows:
        pos[t_index[t], n_index[node]] = (x, y)
    missing = np.argwhere(np.isnan(pos[..., 0]))
    if len(missing):
        k, i = missing[0]
        raise TraceFormatError(
            f"node {nodes[i]} has no position at time {times[k]} ({len(missing)} missing entries)")
    return MobilityTrace(tick, pos, np.array(nodes), (float(w), float(h)), float(times[0]))


def save_trace(trace: MobilityTrace, path: str | Path, header_lines: Iterable[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(TRACE_HEADER) + "\n")
        times = trace.times()
        for k in range(trace.n_ticks):
            t = repr(float(times[k]))
            for i, node in enumerate(trace.node_ids):
                x, y = trace.positions[k, i]
                fh.write(f"{t},{int(node)},{x:.3f},{y:.3f}\n")


# --------------------------------------------------------------------------
# Clustered waypoint generator (simplified self-similar walk surrogate)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MobilityParams:
    """Knobs for :func:`generate_trace`.

    Devices are partitioned into groups that share an itinerary; members keep a
    personal offset from the group reference point, redrawn at every pause.
    A group of size one is an independent walker.
    """

    tick: float = 1.0
    n_clusters: int = 16
    cluster_sigma: float = 40.0  # m, spread of waypoints around a hotspot
    clusters_per_group: int = 2
    waypoints_per_group: int = 6
    mean_group_size: float = 6.0
    solo_fraction: float = 0.15
    group_spread: float = 14.0  # m, radius of member offsets
    speed: float = 1.0  # m/s
    pause_alpha: float = 1.5
    pause_min: float = 30.0  # s
    pause_max: float = 600.0  # s
    arena_margin: float = 20.0


def truncated_pareto(rng: np.random.Generator, alpha: float, lo: float, hi: float, size=None):
    """Inverse-CDF draw from a Pareto(alpha) law truncated to ``[lo, hi]``."""
    u = rng.random(size)
    la, ha = lo ** alpha, hi ** alpha
    return (-(u * ha - u * la - ha) / (ha * la)) ** (-1.0 / alpha)


def _assign_groups(rng: np.random.Generator, n: int, p: MobilityParams) -> list[list[int]]:
    order = rng.permutation(n).tolist()
    n_solo = int(round(p.solo_fraction * n))
    groups = [[i] for i in order[:n_solo]]
    rest = order[n_solo:]
    while rest:
        size = max(2, int(rng.geometric(1.0 / max(p.mean_group_size - 1.0, 1.0))) + 1)
        if len(rest) - size == 1:
            size += 1
        groups.append(rest[:size])
        rest = rest[size:]
    return groups


def _itinerary(rng, waypoints: np.ndarray, horizon: float, p: MobilityParams) -> list[tuple]:
    """Legs ``(t_start, t_end, from_xy, to_xy, is_pause)`` covering ``[0, horizon]``.

    Next destination is the nearest
    waypoint not yet visited in the current round.
    """
    legs = []
    cur = int(rng.integers(len(waypoints)))
    here = waypoints[cur]
    visited = {cur}
    t = 0.0
    while t < horizon:
        pause = float(truncated_pareto(rng, p.pause_alpha, p.pause_min, p.pause_max))
        legs.append((t, t + pause, here, here, True))
        t += pause
        if len(visited) == len(waypoints):
            visited = {cur}
        cand = [j for j in range(len(waypoints)) if j not in visited]
        d = [float(np.hypot(*(waypoints[j] - here))) for j in cand]
        nxt = cand[int(np.argmin(d))]
        # long enough for a member to cross the group disc at walking speed
        travel = max(min(d), 2.0 * p.group_spread, 1e-9) / p.speed
        legs.append((t, t + travel, here, waypoints[nxt], False))
        t += travel
        cur, here = nxt, waypoints[nxt]
        visited.add(cur)
    return legs


def _sample_legs(legs, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    starts = np.array([lg[0] for lg in legs])
    ends = np.array([lg[1] for lg in legs])
    a = np.array([lg[2] for lg in legs])
    b = np.array([lg[3] for lg in legs])
    idx = np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(legs) - 1)
    frac = np.clip((times - starts[idx]) / np.maximum(ends[idx] - starts[idx], 1e-12), 0.0, 1.0)
    xy = a[idx] + (b[idx] - a[idx]) * frac[:, None]
    return xy, idx


def _reflect(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # fold back into [a, b]; clamping would stack devices on the same boundary point
    span = b - a
    y = np.mod(x - a, 2 * span)
    return a + span - np.abs(y - span)


def generate_trace(seed: int, n_devices: int, arena: tuple[float, float] = (1000.0, 1000.0),
                   horizon: float = 3600.0, params: MobilityParams | None = None) -> MobilityTrace:
    """Seeded clustered-waypoint trace; identical output for identical arguments."""
    if n_devices < 2:
        raise ValueError("n_devices must be >= 2")
    p = params or MobilityParams()
    rng = np.random.default_rng(seed)
    w, h = arena
    m = p.arena_margin
    centers = np.column_stack([rng.uniform(m, w - m, p.n_clusters), rng.uniform(m, h - m, p.n_clusters)])
    groups = _assign_groups(rng, n_devices, p)
    n_ticks = int(round(horizon / p.tick))
    times = np.arange(n_ticks) * p.tick
    pos = np.zeros((n_ticks, n_devices, 2))
    lo, hi = np.array([0.0, 0.0]), np.array([w, h])
    for members in groups:
        k = min(p.clusters_per_group, p.n_clusters)
        chosen = rng.choice(p.n_clusters, size=k, replace=False)
        owner = rng.choice(chosen, size=p.waypoints_per_group)
        wps = centers[owner] + rng.normal(0.0, p.cluster_sigma, size=(p.waypoints_per_group, 2))
        wps = _reflect(wps, lo + m, hi - m)
        legs = _itinerary(rng, wps, horizon, p)
        ref, leg_idx = _sample_legs(legs, times)
        if len(members) == 1:
            pos[:, members[0]] = ref
            continue
        # each member holds an offset while paused and drifts to the next one while walking
        pause_no = np.cumsum([1 if lg[4] else 0 for lg in legs]) - 1
        n_pause = int(pause_no[-1]) + 2
        walking = np.array([not lg[4] for lg in legs])[leg_idx]
        starts = np.array([lg[0] for lg in legs])[leg_idx]
        ends = np.array([lg[1] for lg in legs])[leg_idx]
        frac = np.where(walking, np.clip((times - starts) / np.maximum(ends - starts, 1e-12), 0, 1), 0.0)
        k = pause_no[leg_idx]
        for dev in members:
            r = p.group_spread * np.sqrt(rng.random(n_pause))
            th = rng.uniform(0, 2 * np.pi, n_pause)
            off = np.column_stack([r * np.cos(th), r * np.sin(th)])
            pos[:, dev] = ref + off[k] + (off[k + 1] - off[k]) * frac[:, None]
    np.clip(pos, lo, hi, out=pos)
    return MobilityTrace(p.tick, pos, np.arange(n_devices), (float(w), float(h)), 0.0)


def static_trace(points: dict[int, tuple[float, float]] | list[tuple[float, float]], n_ticks: int,
                 tick: float = 1.0, arena: tuple[float, float] = (1000.0, 1000.0)) -> MobilityTrace:
    """Trace in which every device stands still; handy for fixtures."""
    if isinstance(points, dict):
        ids = sorted(points)
        xy = np.array([points[i] for i in ids], dtype=float)
    else:
        ids = list(range(len(points)))
        xy = np.array(points, dtype=float)
    pos = np.broadcast_to(xy, (n_ticks, len(ids), 2)).copy()
    return MobilityTrace(tick, pos, np.array(ids), arena)
