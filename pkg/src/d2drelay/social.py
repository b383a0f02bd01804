"""Weighted contact graph mined from encounter history."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .channel import UNIT_FADING, ChannelParams, hop_delay, rate, received_power
from .mobility import EncounterHistory

DAY = 86400.0


class EdgeClass(enum.Enum):
    SUSTAINABLE = "sustainable"
    BRIDGE = "bridge"


def classify_edge(w_uv: float, zeta: float) -> EdgeClass:
    return EdgeClass.SUSTAINABLE if w_uv >= zeta else EdgeClass.BRIDGE


@dataclass(frozen=True)
class SocialParams:
    rho: float = 0.8
    zeta: float = 0.7
    delta: float = 4.0
    normalize_w: bool = True
    rate_unit: float = DAY  # encounter rate is counted per this many seconds

    def __post_init__(self):
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.zeta <= 0:
            raise ValueError("zeta must be > 0")
        if self.rate_unit <= 0:
            raise ValueError("rate_unit must be > 0")


@dataclass(frozen=True)
class EdgeStats:
    avg_duration: float
    success_fraction: float
    encounter_rate: float
    weight: float
    count: int = 0


@dataclass
class ContactGraph:
    nodes: tuple[int, ...]
    edges: dict[tuple[int, int], EdgeStats]
    zeta: float = 0.7
    rho: float = 0.8
    delta: float = 4.0
    t_c: float = 0.0
    span: float = 0.0
    normalize_w: bool = True
    adj: dict[int, dict[int, float]] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.nodes = tuple(sorted(set(self.nodes) | {x for e in self.edges for x in e}))
        self.adj = {u: {} for u in self.nodes}
        for (u, v), st in self.edges.items():
            if u == v:
                raise ValueError("self loops are not allowed")
            self.adj[u][v] = st.weight
            self.adj[v][u] = st.weight

    @classmethod
    def from_weights(cls, weights: dict[tuple[int, int], float], nodes: Iterable[int] = (),
                     zeta: float = 0.7) -> "ContactGraph":
        """Graph with the given edge weights and no encounter statistics."""
        edges = {}
        for (u, v), w in weights.items():
            key = (u, v) if u < v else (v, u)
            edges[key] = EdgeStats(0.0, 0.0, 0.0, float(w))
        return cls(tuple(nodes), edges, zeta=zeta)

    def weight(self, u: int, v: int) -> float | None:
        return self.adj.get(u, {}).get(v)

    def edge_class(self, u: int, v: int) -> EdgeClass | None:
        w = self.weight(u, v)
        return None if w is None else classify_edge(w, self.zeta)

    def degree_weight(self, u: int) -> float:
        return sum(self.adj[u].values())

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.edges)

    def dump_csv(self, path: str | Path, header_lines: Iterable[str] = ()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["u", "v", "avg_duration_s", "success_frac", "rate_per_day", "weight", "class"])
            for (u, v) in sorted(self.edges):
                st = self.edges[(u, v)]
                wr.writerow([u, v, f"{st.avg_duration:.6g}", f"{st.success_fraction:.6g}",
                             f"{st.encounter_rate:.6g}", f"{st.weight:.6g}",
                             classify_edge(st.weight, self.zeta).value])


def nominal_transfer_time(content_bits: float, params: ChannelParams) -> float:
    """Single-hop transfer time at exactly ``d_max`` with unit fading and no interference."""
    if content_bits <= 0:
        raise ValueError("content_bits must be > 0")
    p_rx = received_power(params.device_tx_power, params.d_max, UNIT_FADING, params)
    return hop_delay(params.d_max, content_bits, rate(p_rx / params.noise_power, params), params)


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 1e-15 * max(abs(hi), 1.0):
        return np.ones_like(x)
    return (x - lo) / (hi - lo)


def build_contact_graph(history: EncounterHistory, t_c: float, social: SocialParams | None = None,
                        span: float | None = None) -> ContactGraph:
    """Weighted graph over pairs whose mean contact lasts at least ``(1 + delta) * t_c``.

    ``span`` is the history length the encounter rate is averaged over
    (defaults to the history window).
    """
    sp = social or SocialParams()
    span = history.span if span is None else span
    if span <= 0:
        raise ValueError("history span must be > 0")
    keys, dbar, frac, lam, cnt = [], [], [], [], []
    for key in sorted(history.encounters):
        d = np.array([e.duration for e in history.encounters[key]], dtype=float)
        if not len(d):
            continue
        mean = float(d.mean())
        if mean < (1.0 + sp.delta) * t_c:
            continue
        keys.append(key)
        dbar.append(mean)
        frac.append(float(np.count_nonzero(d > t_c)) / len(d))
        lam.append(len(d) / (span / sp.rate_unit))
        cnt.append(len(d))
    edges: dict[tuple[int, int], EdgeStats] = {}
    if keys:
        dbar_a, frac_a, lam_a = np.array(dbar), np.array(frac), np.array(lam)
        if sp.normalize_w:
            w = sp.rho * _minmax(frac_a * lam_a) + (1.0 - sp.rho) * _minmax(dbar_a)
        else:
            w = sp.rho * frac_a * lam_a + (1.0 - sp.rho) * dbar_a
        for i, key in enumerate(keys):
            edges[key] = EdgeStats(dbar[i], frac[i], lam[i], float(w[i]), cnt[i])
    return ContactGraph(tuple(history.nodes), edges, zeta=sp.zeta, rho=sp.rho, delta=sp.delta,
                        t_c=t_c, span=span, normalize_w=sp.normalize_w)


def edge_weight(avg_duration: float, success_fraction: float, encounter_rate: float, rho: float) -> float:
    """Unnormalised mix of reliability-weighted frequency and mean duration."""
    return rho * success_fraction * encounter_rate + (1.0 - rho) * avg_duration
