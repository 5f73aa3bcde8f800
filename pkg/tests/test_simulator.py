from __future__ import annotations

import random

import numpy as np
import pytest

from nets import single_server, tandem
from qnet_mdi.driftscan import in_Q
from qnet_mdi.expansion import ExpandedState
from qnet_mdi.fixtures import load_fixture
from qnet_mdi.policies import make_policy
from qnet_mdi.simulator import (
    SimConfig,
    SimTrace,
    build_rates,
    classify,
    next_release,
    settle,
    settled_transitions,
    simulate,
    simulate_many,
    step,
    stream_rng,
)

WHEAT = load_fixture("wheatstone1")
BRIDGE = load_fixture("bridge2")


def fake_trace(totals, horizon=None):
    totals = np.asarray(totals, dtype=float)
    t = np.arange(len(totals), dtype=float)
    horizon = horizon or float(len(totals) - 1)
    return SimTrace("x", ["1"], None, t, totals, np.zeros_like(totals), totals[:, None],
                    None, {}, {}, [], horizon, 0.2 * horizon, float(totals.mean()),
                    {"1": float(totals.mean())})


def test_sim_config_validation():
    for bad in (dict(horizon=0), dict(horizon=1, replications=0),
                dict(horizon=1, warmup_fraction=1.0), dict(horizon=1, sample_interval=0)):
        with pytest.raises(ValueError):
            SimConfig(**bad)


def test_stream_rng_is_reproducible_and_distinct():
    a, b = stream_rng(1, 0, 0), stream_rng(1, 0, 0)
    assert [a.random() for _ in range(3)] == [b.random() for _ in range(3)]
    assert stream_rng(1, 0, 0).random() != stream_rng(1, 0, 1).random()
    assert stream_rng(1, 0, 0).random() != stream_rng(1, 1, 0).random()


def test_build_rates_empty_network():
    pol = make_policy(BRIDGE, {"policy": "jsr"})
    st_ = ExpandedState([0] * 6)
    trs = build_rates(pol.net, st_, pol.decide(st_))
    assert {t.kind for t in trs} == {"arrival"}
    assert sum(t.rate for t in trs) == pytest.approx(2.0)


def test_build_rates_one_busy_server():
    pol = make_policy(single_server(0.0, 0.8), {"policy": "jsqas"})
    st_ = ExpandedState([2])
    trs = build_rates(pol.net, st_, pol.decide(st_))
    assert [(t.kind, t.rate) for t in trs] == [("completion", 0.8)]
    assert trs[0].outcomes == [(1.0, ((0, -1),))]


def test_held_subserver_blocks_its_server():
    pol = make_policy(tandem(0.0, (1.0, 1.0)), {"policy": "jsqas"})
    st_ = ExpandedState([1, 1], {0})
    trs = build_rates(pol.net, st_, pol.decide(st_))
    assert [t.source for t in trs if t.kind == "completion"] == [1]


def test_hold_then_release_cascade():
    pol = make_policy(tandem(0.0, (1.0, 1.0)), {"policy": "jsqas"})
    # a completion at 1 with x_2 >= x_1 is held: no count change
    st_ = ExpandedState([1, 1])
    d = pol.decide(st_)
    assert 0 in d.holds
    assert next_release(pol.net, [1, 1], {0}) is None
    assert next_release(pol.net, [1, 0], {0}) == 0
    assert settle(pol, (1, 0), frozenset({0})) == [(1.0, (0, 1), frozenset())]
    # the completion at 2 releases the held job in the same jump
    outcomes = {tr.source: tr.outcomes for tr in settled_transitions(pol, ExpandedState([1, 1], {0}))}
    assert outcomes == {1: [(1.0, ((0, -1),))]}


def test_step_dwell_mean():
    pol = make_policy(single_server(0.5, 1.0), {"policy": "jsqas"})
    rng = random.Random(3)
    dwells = [step(pol, ExpandedState([2]), rng)[0] for _ in range(20000)]
    assert np.mean(dwells) == pytest.approx(1 / 1.5, rel=0.03)


def test_step_with_no_enabled_transition():
    pol = make_policy(single_server(0.0, 1.0), {"policy": "jsqas"})
    dwell, st_, tr = step(pol, ExpandedState([0]), random.Random(0))
    assert dwell == float("inf") and tr is None


def test_literal_hold_rule_leaves_q_from_single_job_queue():
    # x_1a = 1, x_2 = 0 lies in Q; the hold test x_2 >= x_1a fails, so the job
    # moves and x_2 = 1 > x_1a = 0 leaves Q
    pol = make_policy(WHEAT, {"policy": "jsqas"})
    x = pol.net.state({"1a": 1}).x
    assert in_Q(pol.net, x)
    nxt = []
    for tr in settled_transitions(pol, pol.scan_state(x)):
        for p, moves in tr.outcomes:
            y = list(x)
            for k, d in moves:
                y[k] += d
            nxt.append(in_Q(pol.net, y))
    assert not all(nxt)


def test_zero_arrivals_gives_zero_trace():
    pol = make_policy(BRIDGE.with_arrivals([0, 0]), {"policy": "jsr"})
    tr = simulate(pol, SimConfig(horizon=50.0))
    assert tr.counters["events"] == 0
    assert not tr.totals.any()
    assert len(tr.times) == 51 and tr.times[-1] == 50.0


def test_initial_state_drains():
    pol = make_policy(BRIDGE.with_arrivals([0, 0]), {"policy": "jsr"})
    tr = simulate(pol, SimConfig(horizon=500.0, initial={"3": 4, "4": 2}))
    assert tr.totals[0] == 6 and tr.totals[-1] == 0
    assert tr.counters["arrivals"] == tr.counters["departures"] == 6
    assert tr.violation_counts == {}


@pytest.mark.parametrize("name, fixture", [("jsr", BRIDGE), ("bernoulli", BRIDGE),
                                           ("jsqas", WHEAT), ("jsq", WHEAT), ("jsq", BRIDGE)])
def test_conservation_and_projection(name, fixture):
    pol = make_policy(fixture, {"policy": name})
    tr = simulate(pol, SimConfig(horizon=300.0, seed=5))
    c = tr.counters
    assert c["arrivals"] - c["departures"] == tr.totals[-1]
    assert (tr.xbar.sum(axis=1) == tr.totals).all()
    assert "conservation" not in tr.violation_counts
    assert "activation" not in tr.violation_counts
    if tr.x is not None:
        assert (tr.x.sum(axis=1) == tr.totals).all()


def test_value_column_is_nan_without_test_function():
    tr = simulate(make_policy(BRIDGE, {"policy": "jsq"}), SimConfig(horizon=20.0))
    assert np.isnan(tr.values).all()
    tr = simulate(make_policy(BRIDGE, {"policy": "jsr"}), SimConfig(horizon=20.0))
    assert np.isfinite(tr.values).all()


def test_jsqas_tracks_holds_and_no_held_bottleneck():
    tr = simulate(make_policy(WHEAT, {"policy": "jsqas"}), SimConfig(horizon=2000.0, seed=2))
    assert tr.counters["holds"] > 0 and tr.counters["releases"] > 0
    assert "held_bottleneck" not in tr.violation_counts
    assert "empty_bottleneck" not in tr.violation_counts


def test_same_seed_same_csv(tmp_path):
    pol = make_policy(WHEAT, {"policy": "jsqas"})
    cfg = SimConfig(horizon=300.0, seed=11)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    simulate(pol, cfg).write_csv(a)
    simulate(make_policy(WHEAT, {"policy": "jsqas"}), cfg).write_csv(b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "t,total,V,xbar_1,xbar_2,xbar_3,xbar_4,xbar_5"
    c = tmp_path / "c.csv"
    simulate(pol, SimConfig(horizon=300.0, seed=12)).write_csv(c)
    assert a.read_bytes() != c.read_bytes()


def test_common_random_numbers_across_policies():
    # arrival streams are separate, so both policies see the same arrival count
    cfg = SimConfig(horizon=200.0, seed=4)
    a = simulate(make_policy(BRIDGE, {"policy": "jsr"}), cfg)
    b = simulate(make_policy(BRIDGE, {"policy": "bernoulli"}), cfg)
    assert a.counters["arrivals"] == b.counters["arrivals"]


def test_simulate_many_parallel_matches_serial():
    pol = make_policy(BRIDGE, {"policy": "jsr"})
    cfg = SimConfig(horizon=100.0, seed=3, replications=3)
    serial = simulate_many(pol, cfg, workers=1)
    par = simulate_many(pol, cfg, workers=2)
    assert [t.csv_lines() for t in serial] == [t.csv_lines() for t in par]
    assert [t.replication for t in serial] == [0, 1, 2]


def test_mm1_mean_queue_short():
    pol = make_policy(single_server(0.5, 1.0), {"policy": "jsqas"})
    tr = simulate(pol, SimConfig(horizon=20000.0, seed=1))
    assert tr.time_avg_total == pytest.approx(1.0, rel=0.1)


def test_classify_examples():
    v = classify([fake_trace(np.zeros(100)), fake_trace(np.zeros(100))])
    assert (v.verdict, v.slope) == ("stable", 0.0)
    v = classify([fake_trace(np.arange(100.0)), fake_trace(np.arange(100.0))])
    assert v.verdict == "unstable" and v.slope == pytest.approx(1.0)
    v = classify([fake_trace(0.007 * np.arange(1000.0)), fake_trace(0.007 * np.arange(1000.0))])
    assert v.verdict == "inconclusive"
    with pytest.raises(ValueError):
        classify([])
    assert set(v.to_dict()) >= {"verdict", "slope", "slope_ci", "mean_total", "server_slopes"}
