import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2drelay.channel import (UNIT_FADING, ChannelParams, DegenerateGeometryError, FadingDraw, FadingField,
                              UnreachableLinkError, b2d_cost, d2d_cost, db_to_linear, dbm_to_watts, hop_delay,
                              link_budget, linear_to_db, rate, received_power, sinr, watts_to_dbm)

P = ChannelParams()

# values below come from a standalone calculator script that does not import the package
NOISE_W = 7.165929069962975e-16
FADED_RX = 3.1547867224009665e-06
SINR_15M = 41347924798.51147
DELAY_1MB = 22.22222227225558


def test_received_power_examples():
    assert received_power(0.1, 10, UNIT_FADING, P) == pytest.approx(1e-4, rel=1e-12)
    assert received_power(0.1, 1, UNIT_FADING, P) == pytest.approx(0.1, rel=1e-12)
    assert received_power(0.1, 10, FadingDraw(0.5, -12), P) == pytest.approx(FADED_RX, rel=1e-12)


def test_d2d_cost_is_received_power():
    for d, f in [(10, UNIT_FADING), (1, UNIT_FADING), (10, FadingDraw(0.5, -12))]:
        assert d2d_cost(0.1, d, f, P) == received_power(0.1, d, f, P)


def test_zero_distance_rejected():
    with pytest.raises(DegenerateGeometryError):
        received_power(0.1, 0.0, UNIT_FADING, P)


def test_noise_power():
    assert P.noise_power == pytest.approx(NOISE_W, rel=1e-12)


def test_sinr_examples():
    n = P.noise_power
    assert sinr(n, [], P) == pytest.approx(1.0)
    assert sinr(n, [n], P) == pytest.approx(0.5)
    assert sinr(received_power(0.1, 15, UNIT_FADING, P), [], P) == pytest.approx(SINR_15M, rel=1e-12)


def test_rate_examples():
    assert rate(1, P) == pytest.approx(180e3)
    assert rate(3, P) == pytest.approx(360e3)
    assert rate(0, P) == 0.0
    with pytest.raises(ValueError):
        rate(-0.1, P)


def test_hop_delay_examples():
    assert hop_delay(15, 1.2e6, 1.2e6, P) == pytest.approx(1 + 15 / 2.998e8, rel=1e-12)
    assert hop_delay(15, 1.2e6, 1.2e6, P) == pytest.approx(1.00000005, rel=1e-9)
    assert hop_delay(2.998e8, 0, 1.0, P) == pytest.approx(1.0)
    assert hop_delay(15, 8e6, 360e3, P) == pytest.approx(DELAY_1MB, rel=1e-12)
    with pytest.raises(UnreachableLinkError):
        hop_delay(15, 1e6, 0.0, P)


def test_b2d_cost_examples():
    assert b2d_cost(1, UNIT_FADING, P) == pytest.approx(1e-7)
    assert b2d_cost(100, UNIT_FADING, P) == pytest.approx(0.1)
    assert b2d_cost(200, UNIT_FADING, P) == pytest.approx(8 * b2d_cost(100, UNIT_FADING, P))


@pytest.mark.parametrize("kw", [{"pathloss_exponent": 0}, {"rb_bandwidth": 0}, {"b2d_scale": 1.0},
                                {"b2d_scale": 0.0}, {"d_max": 0}, {"light_speed": 3.1e8}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        ChannelParams(**kw)


def test_negative_rayleigh_rejected():
    with pytest.raises(ValueError):
        FadingDraw(-0.1, 0.0)


def test_link_budget_consistency():
    lb = link_budget(12.0, 4.56e6, FadingDraw(0.7, 3.0), [(0.1, 30.0, UNIT_FADING)], P)
    assert lb.sinr == pytest.approx(lb.received_power / (lb.interference + P.noise_power))
    assert lb.rate == pytest.approx(P.rb_bandwidth * math.log2(1 + lb.sinr))
    assert lb.d2d_cost == lb.received_power
    assert all(math.isfinite(v) and v >= 0 for v in vars(lb).values())


fading = st.builds(FadingDraw, st.floats(0.01, 10), st.floats(-30, 30))


@given(st.floats(0.1, 500), st.floats(0.1, 500), fading)
def test_received_power_decreasing(d1, d2, f):
    if d1 == d2:
        return
    a, b = sorted((d1, d2))
    assert received_power(0.1, a, f, P) > received_power(0.1, b, f, P)
    assert b2d_cost(a, f, P) < b2d_cost(b, f, P)


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_rate_monotone_concave(g1, g2):
    a, b = sorted((g1, g2))
    assert rate(a, P) <= rate(b, P)
    mid = rate((a + b) / 2, P)
    assert mid >= (rate(a, P) + rate(b, P)) / 2 - 1e-9 * max(1.0, mid)


@given(st.floats(1e3, 1e8), st.floats(1e3, 1e8), st.floats(1e3, 1e7))
def test_hop_delay_monotone(r1, r2, b):
    a, c = sorted((r1, r2))
    if a == c:
        return
    assert hop_delay(10, b, a, P) > hop_delay(10, b, c, P)
    assert hop_delay(10, b, a, P) < hop_delay(10, 2 * b, a, P)


@given(st.floats(1e-20, 1e3))
def test_empty_interference_is_snr(prx):
    assert sinr(prx, [], P) == prx / P.noise_power


@given(st.floats(1e-18, 1e4))
def test_db_roundtrip(x):
    assert dbm_to_watts(watts_to_dbm(x)) == pytest.approx(x, rel=1e-12)
    assert db_to_linear(linear_to_db(x)) == pytest.approx(x, rel=1e-12)


def test_fading_field_frozen_and_symmetric():
    f = FadingField(5, P)
    assert f(3, 7) == f(7, 3)
    assert f(3, 7) is f(3, 7)
    g = FadingField(5, P)
    assert g(3, 7) == f(3, 7)
    assert FadingField(6, P)(3, 7) != f(3, 7)
    assert f("BS", 4) == f(-1, 4)


def test_fading_field_vector_matches_scalar():
    f = FadingField(11, P)
    a = np.arange(20)
    b = (a * 7 + 3) % 23
    g = f.gains(a, b)
    for x, y, v in zip(a, b, g):
        assert v == pytest.approx(f(int(x), int(y)).gain, rel=1e-12)


def test_fading_field_distribution():
    f = FadingField(1, P)
    m0, psi = f.draws(np.zeros(40000, dtype=int), np.arange(1, 40001))
    assert m0.mean() == pytest.approx(1.0, abs=0.03)
    assert psi.mean() == pytest.approx(0.0, abs=0.3)
    assert psi.std() == pytest.approx(P.shadowing_stddev, rel=0.03)


def test_fading_disabled_is_unit():
    f = FadingField(1, P, enabled=False)
    assert f(1, 2) == UNIT_FADING
    assert np.all(f.gains([1, 2], [3, 4]) == 1.0)
