from __future__ import annotations

from math import comb

import pytest

from nets import single_server, tandem
from qnet_mdi.driftscan import (
    ScanConfig,
    enumerate_states,
    in_Q,
    lemma_checks,
    scan,
    state_drift,
)
from qnet_mdi.expansion import expand
from qnet_mdi.fixtures import load_fixture
from qnet_mdi.policies import make_policy

BRIDGE = load_fixture("bridge2")
WHEAT = load_fixture("wheatstone1")


def test_scan_config_validation():
    with pytest.raises(ValueError):
        ScanConfig(mode="other")
    with pytest.raises(ValueError):
        ScanConfig(max_total=2, M=3)
    with pytest.raises(ValueError):
        ScanConfig(epsilon=0.0)


def test_state_counts():
    net = expand(BRIDGE)
    states = list(enumerate_states(net, 6))
    assert len(states) == comb(6 + 6, 6) == 924
    assert len(set(states)) == 924
    assert states[0] == (0,) * 6
    assert [sum(s) for s in states] == sorted(sum(s) for s in states)


def test_q_filter():
    net = expand(tandem(rates=(1, 1)))
    assert list(enumerate_states(net, 2, restrict_Q=True)) == [(0, 0), (1, 0), (2, 0), (1, 1)]
    assert in_Q(net, (2, 1)) and not in_Q(net, (0, 1))


def test_mm1_scan_passes_above_zero():
    pol = make_policy(single_server(0.5, 1.0), {"policy": "jsqas"})
    for mode in ("mean", "generator"):
        rep = scan(pol, ScanConfig(max_total=10, epsilon=0.25, M=0, mode=mode))
        assert rep.passed, rep.to_dict()
        assert rep.states_tested == 10
        assert rep.worst_drift == pytest.approx(-0.5)
        assert rep.smallest_M == 0


def test_overloaded_network_fails_everywhere():
    pol = make_policy(BRIDGE.with_arrivals([2.5, 0.0]), {"policy": "jsr"})
    rep = scan(pol, ScanConfig(max_total=3, epsilon=1e-6, mode="mean"))
    assert rep.failure_count > 0
    assert rep.smallest_M is None
    assert rep.worst_drift > 0


def test_report_dict_and_smallest_m():
    pol = make_policy(single_server(0.5, 1.0), {"policy": "jsqas"})
    rep = scan(pol, ScanConfig(max_total=3, epsilon=0.75, mode="mean"))
    # drift is -0.5 everywhere, so every tested state fails the 0.75 margin
    assert rep.failure_count == 3 and rep.smallest_M is None
    d = rep.to_dict()
    assert d["failures"][0]["state"] == {"1": 1}
    assert d["worst_drift_by_total"] == {"1": -0.5, "2": -0.5, "3": -0.5}


def test_shards_merge_to_full_scan():
    pol = make_policy(BRIDGE, {"policy": "jsr"})
    cfg = ScanConfig(max_total=4, epsilon=(3 / 4) ** 5, mode="mean")
    full = scan(pol, cfg)
    merged = scan(pol, cfg, (0, 3)).merge(scan(pol, cfg, (1, 3))).merge(scan(pol, cfg, (2, 3)))
    assert merged.states_checked == full.states_checked
    assert merged.failure_count == full.failure_count
    assert merged.worst_drift == full.worst_drift
    assert sorted(f.state for f in merged.failures) == sorted(f.state for f in full.failures)


def test_lemma_checks_on_wheatstone_q_states():
    pol = make_policy(WHEAT, {"policy": "jsqas"})
    for x in enumerate_states(pol.net, 5, restrict_Q=True):
        assert lemma_checks(pol, pol.scan_state(x)) == []


def test_jsqas_scan_restricted_to_q():
    pol = make_policy(WHEAT, {"policy": "jsqas"})
    rep = scan(pol, ScanConfig(max_total=4, mode="mean"))
    assert rep.states_checked == sum(1 for _ in enumerate_states(pol.net, 4, restrict_Q=True))
    assert rep.lemma_failure_count == 0


def test_state_drift_modes_agree_on_linear_piece():
    pol = make_policy(single_server(0.3, 1.0), {"policy": "jsqas"})
    st_ = pol.scan_state((4,))
    assert state_drift(pol, st_, "mean") == pytest.approx(state_drift(pol, st_, "generator"))
