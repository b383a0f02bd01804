import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2drelay.channel import ChannelParams, FadingField
from d2drelay.community import CommunityStructure
from d2drelay.mobility import generate_trace, static_trace
from d2drelay.relaygraph import (RelayParams, allocate_rbs, assemble, assemble_from_positions, build_adjacency,
                                 conflict_sets, in_range_pairs, load_relay_graph_csv, social_weight,
                                 social_weights)
from d2drelay.social import ContactGraph

CH = ChannelParams()
FLAT = FadingField(0, CH, enabled=False)

# standalone evaluation for the 10 m line fixture, 4.56e6 bits
LINE_DELAY = 0.6842781574261209
LINE_SINR = 139549246194.9762
LINE_B2D = {0: 6.4, 1: 5.9319, 2: 5.4872, 3: 5.0653, 4: 4.6656}


def test_adjacency_boundary():
    near = static_trace([(100, 100), (114.9, 100)], 1)
    far = static_trace([(100, 100), (115.1, 100)], 1)
    assert build_adjacency(near, 0, CH, fading=FLAT, sinr_screen=False) == {(0, 1), (1, 0)}
    assert build_adjacency(far, 0, CH, fading=FLAT, sinr_screen=False) == set()


def test_three_in_range_six_edges():
    tr = static_trace([(100, 100), (105, 100), (100, 105)], 1)
    assert len(build_adjacency(tr, 0, CH, fading=FLAT, sinr_screen=False)) == 6


def test_rb_examples():
    assert len(set(allocate_rbs([(0, 1), (2, 3)], [{1}, {0}], 2))) == 2
    assert allocate_rbs([(0, 1), (2, 3)], [set(), set()], 2) == [0, 0]
    star = [{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}]
    rbs = allocate_rbs([(0, k) for k in range(1, 5)], star, 4)
    assert sorted(rbs) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        allocate_rbs([], [], 0)


def test_rb_wraps_beyond_pool():
    star = [{1, 2}, {0, 2}, {0, 1}]
    assert sorted(allocate_rbs([(0, 1), (0, 2), (0, 3)], star, 2)) == [0, 0, 1]


@st.composite
def conflict_graphs(draw):
    n = draw(st.integers(1, 12))
    pairs = [p for p in itertools.combinations(range(n), 2) if draw(st.booleans())]
    conf = [set() for _ in range(n)]
    for a, b in pairs:
        conf[a].add(b)
        conf[b].add(a)
    return conf


@settings(max_examples=100)
@given(conflict_graphs(), st.integers(1, 12))
def test_rb_coloring_proper_when_pool_suffices(conf, F):
    rbs = allocate_rbs(list(range(len(conf))), conf, F)
    assert all(0 <= z < F for z in rbs)
    greedy = allocate_rbs(list(range(len(conf))), conf, 10 ** 6)
    if max(greedy, default=0) < F:
        for a, nb in enumerate(conf):
            for b in nb:
                assert rbs[a] != rbs[b]


def test_conflict_sets_symmetric_irreflexive():
    tr = generate_trace(1, 40, (150.0, 150.0), 5)
    pos = tr.snapshot(0)
    links = in_range_pairs(pos, 15.0)
    conf = conflict_sets(links, pos, 30.0)
    for a, nb in enumerate(conf):
        assert a not in nb
        for b in nb:
            assert a in conf[b]


def social_fixture():
    # A={0,1,2}, B={3,4}, C={5}; (0,1) sustainable, (0,2) bridge, (3,4) sustainable,
    # (2,3) sustainable A-B contact, (1,4) bridge A-B contact; C has no contacts
    w = {(0, 1): 1.0, (0, 2): 0.3, (3, 4): 2.0, (2, 3): 0.9, (1, 4): 0.2}
    gp = ContactGraph.from_weights(w, range(6), zeta=0.7)
    comms = CommunityStructure.from_sets([{0, 1, 2}, {3, 4}, {5}], gp)
    return gp, comms


def test_rule_values_by_direct_evaluation():
    gp, comms = social_fixture()
    r1 = social_weight(0, 1, comms, gp)
    r2 = social_weight(1, 2, comms, gp)
    r3 = social_weight(0, 3, comms, gp)
    r4 = social_weight(2, 3, comms, gp)
    assert r1 == ("i", pytest.approx(1 / 1.3))
    assert r2 == ("ii", pytest.approx(1.5 * (1 / 1.3)))
    assert r3 == ("iii", pytest.approx(1 / 0.2))
    assert r4 == ("iv", pytest.approx(0.75 / 0.2))
    assert r1[1] < r2[1] <= r4[1] < r3[1]
    assert social_weight(0, 5, comms, gp)[0] == "iii_max"


def test_rule1_smallest_for_big_community():
    w = {(0, 1): 4.0, (1, 2): 3.0, (0, 2): 3.0, (2, 3): 0.5}
    gp = ContactGraph.from_weights(w, range(4), zeta=0.7)
    comms = CommunityStructure.from_sets([{0, 1, 2}, {3}], gp)
    rule, val = social_weight(0, 1, comms, gp)
    assert rule == "i" and val == pytest.approx(1 / 10)
    W, rules = social_weights([(0, 1), (1, 2), (2, 3)], comms, gp)
    assert W[(0, 1)] == min(W.values()) == 0.0


def test_missing_community_edge_is_wmax():
    gp, comms = social_fixture()
    W, rules = social_weights([(0, 1), (0, 3), (0, 5)], comms, gp)
    assert W[(0, 5)] == 1.0
    assert all(0 <= v <= 1 for v in W.values())


def test_unknown_device_treated_as_outsider():
    gp, comms = social_fixture()
    assert social_weight(0, 99, comms, gp)[0] == "iii_max"


def line_graph(b=4.56e6):
    pts = [(100.0 + 10 * k, 500.0) for k in range(5)]
    tr = static_trace(pts, 3)
    return assemble(tr, 0, 0, 4, b, 100.0, None, None, CH, RelayParams(), FLAT)


def test_line_fixture_matches_closed_forms():
    g = line_graph()
    assert sorted(g.edges) == sorted([(k, k + 1) for k in range(4)] + [(k + 1, k) for k in range(4)])
    for e in g.edges.values():
        assert e.t == pytest.approx(LINE_DELAY, rel=1e-12)
        assert e.sinr == pytest.approx(LINE_SINR, rel=1e-12)
        assert e.c_raw == pytest.approx(1e-4, rel=1e-12)
        assert e.c == pytest.approx(1.0)
        assert e.w == e.W + e.c
    for k, v in LINE_B2D.items():
        assert g.b2d[k] == pytest.approx(v, rel=1e-12)
    assert len(set(e.rb for e in g.edges.values())) == 8  # all mutually conflicting, pool of 25


def test_two_devices_single_edge():
    tr = static_trace([(100, 100), (110, 100)], 2)
    g = assemble(tr, 0, 0, 1, 1.2e6, 10.0, None, None, CH, RelayParams(), FLAT)
    assert (0, 1) in g.edges
    assert g.edges[(0, 1)].t == pytest.approx(LINE_DELAY * 1.2e6 / 4.56e6, rel=1e-6)


def test_isolated_receiver_only_bs():
    tr = static_trace([(100, 100), (110, 100), (400, 400)], 2)
    g = assemble(tr, 0, 0, 2, 1.2e6, 10.0, None, None, CH, RelayParams(), FLAT)
    assert not any(2 in e for e in g.edges)
    assert 2 in g.b2d


def test_dump_and_reload(tmp_path):
    g = line_graph()
    p = tmp_path / "g.csv"
    g.dump_csv(p, ["hdr"])
    h = load_relay_graph_csv(p)
    assert (h.s, h.r, h.t_max) == (0, 4, 100.0)
    assert set(h.edges) == set(g.edges)
    for e in g.edges:
        assert h.edges[e].w == g.edges[e].w and h.edges[e].t == g.edges[e].t
    assert h.b2d == g.b2d


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_assembled_graph_invariants(seed):
    tr = generate_trace(seed, 50, (200.0, 200.0), 60, None)
    pos = tr.snapshot(30)
    rng = np.random.default_rng(seed)
    sets = [set() for _ in range(4)]
    for u in pos:
        sets[int(rng.integers(4))].add(u)
    w = {}
    for u, v in itertools.combinations(sorted(pos), 2):
        if rng.random() < 0.1:
            w[(u, v)] = float(rng.uniform(0.1, 2.0))
    gp = ContactGraph.from_weights(w, pos)
    comms = CommunityStructure.from_sets([s for s in sets if s], gp)
    fad = FadingField(seed, CH)
    g = assemble_from_positions(pos, 30, 0, 1, 1.2e6, 100.0, comms, gp, CH, RelayParams(), fad,
                                np.array([[50.0, 50.0], [150.0, 150.0]]), bs_position=(100.0, 100.0))
    thr = CH.sinr_threshold_linear
    _, rules = social_weights(g.edges.keys(), comms, gp)
    by_rule = {}
    for e, d in g.edges.items():
        assert d.distance <= CH.d_max and d.sinr >= thr
        assert 0 <= d.W <= 1 and 0 <= d.c <= 1
        assert d.w == d.W + d.c
        key = tuple(sorted((comms.community_of(e[0]), comms.community_of(e[1]))))
        by_rule.setdefault(rules[e], {}).setdefault(key, []).append(d.W)
    all_i = [v for vs in by_rule.get("i", {}).values() for v in vs]
    all_ii = [v for vs in by_rule.get("ii", {}).values() for v in vs]
    if all_i and all_ii:
        assert max(all_i) < min(all_ii)
    for key, w4 in by_rule.get("iv", {}).items():
        for w3 in by_rule.get("iii", {}).get(key, []):
            assert max(w4) < w3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 39))
def test_removing_device_never_adds_in_range_edges(seed, drop):
    tr = generate_trace(seed, 40, (150.0, 150.0), 5)
    full = build_adjacency(tr, 0, CH, sinr_screen=False)
    fewer = build_adjacency(tr.without([drop]), 0, CH, sinr_screen=False)
    assert fewer <= full
    assert not any(drop in e for e in fewer)
