"""Radio channel: received power, SINR, rate, hop delay and the two BS cost functions.

All power arithmetic is in linear watts; dB/dBm only appear in parameter
records and at the conversion helpers below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np

LIGHT_SPEED = 2.998e8


class DegenerateGeometryError(ValueError):
    """Two radios at the same position (zero distance)."""


class UnreachableLinkError(ValueError):
    """A link with zero achievable rate cannot carry content."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class ChannelParams:
    """Propagation and cost constants; defaults follow the urban macrocell setup."""

    pathloss_exponent: float = 3.0
    shadowing_stddev: float = 12.0  # dB
    noise_spectral_density: float = -174.0  # dBm/Hz
    rb_bandwidth: float = 180e3  # Hz, 12 sub-carriers x 15 kHz
    device_tx_power: float = 0.1  # W
    bs_tx_power: float = 10.0  # W
    d_max: float = 15.0  # m
    sinr_threshold: float = 0.0  # dB
    b2d_scale: float = 1e-6  # K
    light_speed: float = LIGHT_SPEED

    def __post_init__(self):
        if not self.pathloss_exponent > 0:
            raise ValueError("pathloss_exponent must be > 0")
        if not self.rb_bandwidth > 0:
            raise ValueError("rb_bandwidth must be > 0")
        if not 0 < self.b2d_scale < 1:
            raise ValueError("b2d_scale K must lie in (0, 1)")
        if not self.d_max > 0:
            raise ValueError("d_max must be > 0")
        if self.shadowing_stddev < 0:
            raise ValueError("shadowing_stddev must be >= 0")
        if abs(self.light_speed - LIGHT_SPEED) > 1e-3 * LIGHT_SPEED:
            raise ValueError("light_speed must be 2.998e8 m/s within 0.1%")

    @property
    def noise_power(self) -> float:
        """Thermal noise over one RB, in watts."""
        return dbm_to_watts(self.noise_spectral_density) * self.rb_bandwidth

    @property
    def sinr_threshold_linear(self) -> float:
        return db_to_linear(self.sinr_threshold)


@dataclass(frozen=True)
class FadingDraw:
    m0_sq: float = 1.0  # Rayleigh power gain |m0|^2
    psi_db: float = 0.0  # log-normal shadowing

    def __post_init__(self):
        if self.m0_sq < 0:
            raise ValueError("m0_sq must be >= 0")

    @property
    def gain(self) -> float:
        return self.m0_sq * 10.0 ** (self.psi_db / 10.0)


UNIT_FADING = FadingDraw(1.0, 0.0)


@dataclass(frozen=True)
class LinkBudget:
    received_power: float
    interference: float
    sinr: float
    rate: float
    delay: float
    d2d_cost: float
    distance: float


def draw_fading(rng: np.random.Generator, params: ChannelParams) -> FadingDraw:
    return FadingDraw(float(rng.exponential(1.0)), float(rng.normal(0.0, params.shadowing_stddev)))


_U64 = np.uint64
_GOLD = _U64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLD
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
        return z ^ (z >> _U64(31))


def _unit(x: np.ndarray) -> np.ndarray:
    """Map 64-bit words to floats strictly inside (0, 1)."""
    return ((x >> _U64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


class FadingField:
    """Per-session frozen fading, one draw per unordered radio pair.

    Draws come from a counter-based hash of (seed, pair), so a pair's value
    does not depend on which other pairs were queried or in what order, and
    many pairs can be drawn at once with :meth:`gains`. The BS is keyed as -1.
    """

    def __init__(self, seed: int, params: ChannelParams, enabled: bool = True):
        self.seed = int(seed)
        self.params = params
        self.enabled = enabled
        self._base = _splitmix64(np.array([self.seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
        self._cache: dict[tuple, FadingDraw] = {}

    @staticmethod
    def _key(a: Hashable, b: Hashable) -> tuple:
        ia = -1 if a == "BS" else int(a)
        ib = -1 if b == "BS" else int(b)
        return (ia, ib) if ia <= ib else (ib, ia)

    def draws(self, a, b) -> tuple[np.ndarray, np.ndarray]:
        """(m0_sq, psi_db) arrays for pairs of integer ids (-1 is the BS)."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        lo = (np.minimum(a, b) + 1).astype(np.uint64)
        hi = (np.maximum(a, b) + 1).astype(np.uint64)
        with np.errstate(over="ignore"):
            h = _splitmix64(self._base ^ _splitmix64((lo << _U64(32)) | hi))
        u1 = _unit(_splitmix64(h ^ _U64(1)))
        u2 = _unit(_splitmix64(h ^ _U64(2)))
        u3 = _unit(_splitmix64(h ^ _U64(3)))
        m0_sq = -np.log(u1)
        psi = self.params.shadowing_stddev * np.sqrt(-2.0 * np.log(u2)) * np.cos(2.0 * np.pi * u3)
        return m0_sq, psi

    def gains(self, a, b) -> np.ndarray:
        """Linear power gains |m0|^2 * 10^(psi/10) for many pairs at once."""
        if not self.enabled:
            return np.ones(np.broadcast(np.asarray(a), np.asarray(b)).shape)
        m0_sq, psi = self.draws(a, b)
        return m0_sq * 10.0 ** (psi / 10.0)

    def __call__(self, a: Hashable, b: Hashable) -> FadingDraw:
        if not self.enabled:
            return UNIT_FADING
        key = self._key(a, b)
        draw = self._cache.get(key)
        if draw is None:
            m0_sq, psi = self.draws([key[0]], [key[1]])
            draw = FadingDraw(float(m0_sq[0]), float(psi[0]))
            self._cache[key] = draw
        return draw


def received_power(tx_power: float, d: float, fading: FadingDraw, params: ChannelParams) -> float:
    if d <= 0:
        raise DegenerateGeometryError(f"distance must be > 0, got {d}")
    return tx_power * d ** (-params.pathloss_exponent) * fading.m0_sq * 10.0 ** (fading.psi_db / 10.0)


def sinr(rx_power: float, interferer_powers: Iterable[float], params: ChannelParams) -> float:
    """Linear SINR from the wanted received power and co-channel interferer powers."""
    return rx_power / (math.fsum(interferer_powers) + params.noise_power)


def link_sinr(tx_power: float, d: float, fading: FadingDraw,
              interferers: Iterable[tuple[float, float, FadingDraw]], params: ChannelParams) -> float:
    """SINR of one link given ``(tx_power, distance_to_receiver, fading)`` per co-channel transmitter."""
    p_rx = received_power(tx_power, d, fading, params)
    return sinr(p_rx, (received_power(p, di, f, params) for p, di, f in interferers), params)


def rate(sinr_linear: float, params: ChannelParams) -> float:
    if sinr_linear < 0:
        raise ValueError("sinr must be >= 0")
    return params.rb_bandwidth * math.log2(1.0 + sinr_linear)


def hop_delay(d: float, content_bits: float, rate_bps: float, params: ChannelParams) -> float:
    if rate_bps <= 0:
        raise UnreachableLinkError("rate is zero; link cannot carry content")
    return d / params.light_speed + content_bits / rate_bps


def d2d_cost(tx_power: float, d: float, fading: FadingDraw, params: ChannelParams) -> float:
    """BS incentive for a D2D hop; numerically the hop's received power."""
    return received_power(tx_power, d, fading, params)


def b2d_cost(d_bs: float, fading: FadingDraw, params: ChannelParams) -> float:
    return params.b2d_scale / received_power(params.bs_tx_power, d_bs, fading, params)


def link_budget(d: float, content_bits: float, fading: FadingDraw,
                interferers: Iterable[tuple[float, float, FadingDraw]],
                params: ChannelParams, tx_power: float | None = None) -> LinkBudget:
    p_tx = params.device_tx_power if tx_power is None else tx_power
    p_rx = received_power(p_tx, d, fading, params)
    interference = math.fsum(received_power(p, di, f, params) for p, di, f in interferers)
    g = p_rx / (interference + params.noise_power)
    r = rate(g, params)
    t = hop_delay(d, content_bits, r, params) if r > 0 else math.inf
    return LinkBudget(p_rx, interference, g, r, t, p_rx, d)
