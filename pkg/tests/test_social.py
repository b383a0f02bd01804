import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2drelay.channel import ChannelParams, hop_delay
from d2drelay.mobility import Encounter, EncounterHistory
from d2drelay.social import (EdgeClass, SocialParams, build_contact_graph, classify_edge, edge_weight,
                             nominal_transfer_time)

CH = ChannelParams()
T_C_150KB = 0.1890336662593077  # standalone evaluation of the rate / delay closed forms


def history(pairs: dict, span=86400.0):
    enc = {}
    for (u, v), durs in pairs.items():
        t = 0.0
        enc[(u, v)] = []
        for d in durs:
            enc[(u, v)].append(Encounter(u, v, t, float(d)))
            t += d + 10
    nodes = sorted({x for p in pairs for x in p})
    return EncounterHistory(enc, 0.0, span, tuple(nodes))


RAW = SocialParams(normalize_w=False)


def test_t_c_examples():
    assert nominal_transfer_time(1.2e6, CH) == pytest.approx(T_C_150KB, rel=1e-12)
    a = nominal_transfer_time(1e6, CH) - CH.d_max / CH.light_speed
    b = nominal_transfer_time(2e6, CH) - CH.d_max / CH.light_speed
    assert b == pytest.approx(2 * a, rel=1e-12)
    with pytest.raises(ValueError):
        nominal_transfer_time(0, CH)


def test_t_c_when_rate_equals_bits():
    t = nominal_transfer_time(1.0, CH)
    r = 1.0 / (t - CH.d_max / CH.light_speed)
    assert hop_delay(CH.d_max, r, r, CH) == pytest.approx(1 + 15 / 2.998e8, rel=1e-9)


def test_mean_and_success_fraction():
    g = build_contact_graph(history({(0, 1): [4, 6, 8]}), t_c=1.0, social=SocialParams(delta=0, normalize_w=False))
    assert g.edges[(0, 1)].avg_duration == 6.0
    g = build_contact_graph(history({(0, 1): [3, 5, 7]}), t_c=4.0, social=SocialParams(delta=0, normalize_w=False))
    assert g.edges[(0, 1)].success_fraction == pytest.approx(2 / 3)


def test_success_fraction_strict():
    g = build_contact_graph(history({(0, 1): [4, 4, 5]}), t_c=4.0, social=SocialParams(delta=0, normalize_w=False))
    assert g.edges[(0, 1)].success_fraction == pytest.approx(1 / 3)


def test_weight_formula():
    assert edge_weight(10, 0.5, 2, 0.8) == pytest.approx(2.8)


def test_rate_per_day():
    g = build_contact_graph(history({(0, 1): [20, 20]}, span=2 * 86400), t_c=1.0, social=RAW)
    assert g.edges[(0, 1)].encounter_rate == pytest.approx(1.0)
    st_ = g.edges[(0, 1)]
    assert st_.weight == edge_weight(st_.avg_duration, st_.success_fraction, st_.encounter_rate, 0.8)


def test_delta_threshold_excludes():
    g = build_contact_graph(history({(0, 1): [9, 9]}), t_c=2.0, social=SocialParams(delta=4, normalize_w=False))
    assert (0, 1) not in g.edges
    g = build_contact_graph(history({(0, 1): [10, 10]}), t_c=2.0, social=SocialParams(delta=4, normalize_w=False))
    assert (0, 1) in g.edges


def test_classify_boundary():
    assert classify_edge(0.7, 0.7) is EdgeClass.SUSTAINABLE
    assert classify_edge(0.69, 0.7) is EdgeClass.BRIDGE
    assert classify_edge(2.8, 0.7) is EdgeClass.SUSTAINABLE


def test_empty_history_is_empty_graph():
    g = build_contact_graph(EncounterHistory({}, 0.0, 100.0), 1.0)
    assert g.m == 0


@pytest.mark.parametrize("kw", [{"rho": 1.1}, {"rho": -0.1}, {"delta": -1}, {"zeta": 0}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        SocialParams(**kw)


def test_normalized_weights_in_unit_interval():
    g = build_contact_graph(history({(0, 1): [30, 40], (1, 2): [100], (2, 3): [15, 15, 15]}), t_c=1.0)
    ws = [e.weight for e in g.edges.values()]
    assert min(ws) >= 0 and max(ws) <= 1 + 1e-12


def test_symmetric_lookup():
    g = build_contact_graph(history({(0, 1): [30, 40]}), t_c=1.0, social=RAW)
    assert g.weight(0, 1) == g.weight(1, 0)


durs = st.lists(st.floats(0.5, 500), min_size=1, max_size=6)
hist_st = st.dictionaries(st.tuples(st.integers(0, 5), st.integers(6, 9)), durs, min_size=1, max_size=8)


@settings(max_examples=80)
@given(hist_st, st.floats(0.1, 20), st.floats(0, 6), st.floats(0, 6))
def test_delta_monotone(pairs, t_c, d1, d2):
    lo, hi = sorted((d1, d2))
    h = history(pairs)
    a = build_contact_graph(h, t_c, SocialParams(delta=lo, normalize_w=False))
    b = build_contact_graph(h, t_c, SocialParams(delta=hi, normalize_w=False))
    assert set(b.edges) <= set(a.edges)


@settings(max_examples=80)
@given(hist_st, st.floats(0.1, 20), st.floats(0.1, 10))
def test_duration_scaling(pairs, t_c, c):
    h1 = history(pairs)
    h2 = history({k: [d * c for d in v] for k, v in pairs.items()})
    a = build_contact_graph(h1, t_c, SocialParams(delta=0, normalize_w=False))
    b = build_contact_graph(h2, t_c * c, SocialParams(delta=0, normalize_w=False))
    assert set(a.edges) == set(b.edges)
    for k in a.edges:
        assert b.edges[k].avg_duration == pytest.approx(c * a.edges[k].avg_duration, rel=1e-9)
        assert b.edges[k].success_fraction == a.edges[k].success_fraction


@settings(max_examples=80)
@given(hist_st, st.floats(0.1, 20), st.floats(0, 1))
def test_weight_recomputed_from_raw(pairs, t_c, rho):
    h = history(pairs)
    g = build_contact_graph(h, t_c, SocialParams(rho=rho, delta=0, normalize_w=False))
    for (u, v), es in g.edges.items():
        d = h.durations(u, v)
        mean = math.fsum(d) / len(d)
        frac = sum(x > t_c for x in d) / len(d)
        lam = len(d) / (h.span / 86400.0)
        assert es.weight == pytest.approx(rho * frac * lam + (1 - rho) * mean, rel=1e-9)
        assert 0 <= es.success_fraction <= 1
        assert es.avg_duration >= t_c
