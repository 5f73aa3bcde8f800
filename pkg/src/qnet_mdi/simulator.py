"""Continuous-time Markov chain simulation of a policy.

Expanded-network policies (JSR, JSQ-AS, Bernoulli) run on subserver counts;
the plain JSQ baseline runs on the original network with FCFS queues.

Randomness comes from Python's ``random.Random`` (MT19937), one generator per
stream: one per arrival class, one for service clocks and one for policy tie
breaks.  Stream seeds are derived from ``(seed, replication, stream)`` with
``numpy.random.SeedSequence``, so arrival epochs are identical across
policies for a given seed (common random numbers) and runs are reproducible
bit for bit.
"""

from __future__ import annotations

import gc
import math
import os
import random
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import stats

from .expansion import ExpandedState, initial_split
from .policies import JSQASPolicy, JSQPolicy, JSRPolicy, Policy, PolicyDecision

RNG_ALGORITHM = "MT19937 (python random.Random), seeds from numpy SeedSequence"
MAX_RECORDED_VIOLATIONS = 50

UNSTABLE_SLOPE = 0.01
STABLE_SLOPE = 0.005


@dataclass
class SimConfig:
    horizon: float
    seed: int = 0
    replications: int = 1
    sample_interval: float = 1.0
    warmup_fraction: float = 0.2
    check_invariants: bool = True
    initial: dict | None = None
    split_mode: str = "balanced"

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.replications < 1:
            raise ValueError("at least one replication is required")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")


@dataclass
class Violation:
    time: float
    kind: str
    detail: str


@dataclass
class SimTrace:
    policy: str
    server_ids: list[str]
    subserver_names: list[str] | None
    times: np.ndarray
    totals: np.ndarray
    values: np.ndarray
    xbar: np.ndarray
    x: np.ndarray | None
    counters: dict[str, int]
    violation_counts: dict[str, int]
    violations: list[Violation]
    horizon: float
    warmup: float
    time_avg_total: float
    time_avg_xbar: dict[str, float]
    seed: int = 0
    replication: int = 0

    def csv_lines(self) -> list[str]:
        header = ["t", "total", "V"] + [f"xbar_{n}" for n in self.server_ids]
        lines = [",".join(header)]
        for i in range(len(self.times)):
            row = [repr(float(self.times[i])), str(int(self.totals[i])),
                   repr(float(self.values[i]))]
            row += [str(int(v)) for v in self.xbar[i]]
            lines.append(",".join(row))
        return lines

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.csv_lines()) + "\n")

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "replication": self.replication,
            "horizon": self.horizon,
            "counters": self.counters,
            "violation_counts": self.violation_counts,
            "violations": [v.__dict__ for v in self.violations],
            "time_avg_total": self.time_avg_total,
            "time_avg_xbar": self.time_avg_xbar,
        }


@dataclass
class StabilityVerdict:
    verdict: str
    slope: float
    slope_ci: float
    mean_total: float
    replications: int
    server_slopes: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "slope": self.slope,
            "slope_ci": self.slope_ci,
            "mean_total": self.mean_total,
            "replications": self.replications,
            "server_slopes": {n: {"slope": s, "ci": c} for n, (s, c) in self.server_slopes.items()},
        }


@dataclass
class Transition:
    rate: float
    kind: str
    source: Any
    outcomes: list[tuple[float, tuple[tuple[int, int], ...]]]


def stream_rng(seed: int, replication: int, stream: int) -> random.Random:
    state = np.random.SeedSequence([int(seed), int(replication), int(stream)]).generate_state(4)
    return random.Random(int.from_bytes(np.asarray(state, dtype=np.uint32).tobytes(), "little"))


def sample(dist: dict, rng: random.Random):
    if len(dist) == 1:
        return next(iter(dist))
    u = rng.random()
    acc = 0.0
    last = None
    for item, p in dist.items():
        acc += p
        last = item
        if u < acc:
            return item
    return last


def build_rates(net, state: ExpandedState, decision: PolicyDecision) -> list[Transition]:
    """Enabled transitions at ``state`` with their rates and outcome distributions.

    A completion at a subserver whose finished job must be held has a single
    outcome with no count change.
    """
    out = []
    for c in net.spec.classes:
        if c.lam > 0:
            dist = decision.arrival_routing[c.id]
            out.append(Transition(c.lam, "arrival", c.id,
                                  [(p, ((k, 1),)) for k, p in dist.items()]))
    rates = net.spec.rates
    x, held = state.x, state.held
    for n, dist in decision.activation.items():
        for k, p in dist.items():
            if p <= 0 or x[k] == 0 or k in held:
                continue
            if k in decision.holds:
                outcomes = [(1.0, ())]
            else:
                outcomes = [(q, ((k, -1),) if j is None else ((k, -1), (j, 1)))
                            for j, q in decision.discharge_routing[k].items()]
            out.append(Transition(rates[n] * p, "completion", k, outcomes))
    return out


def next_release(net, x: Sequence[int], held) -> int | None:
    """Smallest held subserver whose route successor is now shorter than itself."""
    subs = net.subservers
    for k in sorted(held):
        succ = subs[k].succ
        if succ is None or x[succ] < x[k]:
            return k
    return None


def settle(policy: Policy, x: Sequence[int], held: frozenset[int]
           ) -> list[tuple[float, tuple[int, ...], frozenset[int]]]:
    """Exact distribution of the state reached by the release cascade."""
    k = next_release(policy.net, x, held)
    if k is None:
        return [(1.0, tuple(x), held)]
    out = []
    rest = held - {k}
    for j, q in policy.discharge(x, k).items():
        y = list(x)
        y[k] -= 1
        if j is not None:
            y[j] += 1
        out.extend((q * p, z, h) for p, z, h in settle(policy, y, rest))
    return out


def settled_transitions(policy: Policy, state: ExpandedState) -> list[Transition]:
    """Enabled transitions whose outcomes include the instantaneous release cascade.

    Outcomes are expressed as count moves relative to ``state.x`` so they can be
    fed to the generator-drift computation.
    """
    x0 = state.x
    held0 = frozenset(state.held)
    decision = policy.decide(state)
    out = []
    for tr in build_rates(policy.net, state, decision):
        outcomes = []
        for p, moves in tr.outcomes:
            y = list(x0)
            for k, dk in moves:
                y[k] += dk
            held = held0 | {tr.source} if tr.kind == "completion" and not moves else held0
            for q, z, _ in settle(policy, y, held):
                diff = tuple((k, z[k] - x0[k]) for k in range(len(z)) if z[k] != x0[k])
                outcomes.append((p * q, diff))
        out.append(Transition(tr.rate, tr.kind, tr.source, outcomes))
    return out


class _Expanded:
    """Mutable replication state for expanded-network policies."""

    def __init__(self, policy: Policy, state: ExpandedState, rng: random.Random):
        self.policy = policy
        self.net = policy.net
        self.state = state
        self.rng = rng
        self.counters = {"arrivals": 0, "departures": 0, "holds": 0, "releases": 0,
                         "switches": 0, "events": 0}
        rates = self.net.spec.rates
        self._rate_of = [rates[s.server] for s in self.net.subservers]
        self.decision = self._decide()

    def _decide(self) -> PolicyDecision:
        d = self.policy.decide(self.state)
        self.state.active = d.active_map()
        self.counters["switches"] += len(d.switches)
        return d

    def _move(self, k: int, j: int | None) -> None:
        self.state.x[k] -= 1
        if j is None:
            self.counters["departures"] += 1
        else:
            self.state.x[j] += 1

    def arrival(self, cls: str) -> None:
        k = sample(self.decision.arrival_routing[cls], self.rng)
        self.state.x[k] += 1
        self.counters["arrivals"] += 1

    def completion(self, k: int) -> None:
        d = self.decision
        if k in d.holds:
            self.state.held.add(k)
            self.counters["holds"] += 1
        else:
            self._move(k, sample(d.discharge_routing[k], self.rng))

    def release_cascade(self) -> None:
        """Release held jobs whose hold condition turned false.

        The smallest releasable subserver goes first and the held set is
        re-examined after every release, since a discharge changes counts.
        """
        held = self.state.held
        x = self.state.x
        while held:
            k = next_release(self.net, x, held)
            if k is None:
                return
            held.discard(k)
            self.counters["releases"] += 1
            self._move(k, sample(self.policy.discharge(x, k), self.rng))

    def after_event(self) -> None:
        self.release_cascade()
        self.counters["events"] += 1
        self.decision = self._decide()

    def completions(self) -> tuple[list[tuple[float, int]], float]:
        """Busy subservers with their service rates, and the total rate.

        A decision always belongs to one (counts, held) state, so the list is
        derived once per decision object.
        """
        d = self.decision
        hit = d.derived.get("completions")
        if hit is None:
            x, held, rate_of = self.state.x, self.state.held, self._rate_of
            out = [(rate_of[k] * p, k) for dist in d.activation.values()
                   for k, p in dist.items() if p > 0 and x[k] > 0 and k not in held]
            hit = d.derived["completions"] = (out, sum(r for r, _ in out))
        return hit


def step(policy: Policy, state: ExpandedState, rng: random.Random
         ) -> tuple[float, ExpandedState, Transition | None]:
    """One jump of the chain from ``state`` using a single generator.

    Returns the dwell time, the next state (after instantaneous controls) and
    the transition that fired.
    """
    eng = _Expanded(policy, state.copy(), rng)
    trs = build_rates(policy.net, eng.state, eng.decision)
    total = sum(t.rate for t in trs)
    if total <= 0:
        return math.inf, eng.state, None
    dwell = rng.expovariate(total)
    u = rng.random() * total
    acc = 0.0
    chosen = trs[-1]
    for tr in trs:
        acc += tr.rate
        if u < acc:
            chosen = tr
            break
    if chosen.kind == "arrival":
        eng.arrival(chosen.source)
    else:
        eng.completion(chosen.source)
    eng.after_event()
    return dwell, eng.state, chosen


class _Recorder:
    """Samples on a fixed grid and integrates counts over the post-warmup window.

    ``counts`` is the model state vector (subserver counts, or server counts for
    the original-network engine); ``project`` maps it to per-server totals and
    is only called at sample instants and at the end.
    """

    def __init__(self, cfg: SimConfig, n_counts: int, project, keep_counts: bool):
        self.cfg = cfg
        self.project = project
        self.next_sample = 0.0
        self.warmup = cfg.warmup_fraction * cfg.horizon
        self.times: list[float] = []
        self.totals: list[int] = []
        self.values: list[float] = []
        self.xbar: list[tuple[int, ...]] = []
        self.x: list[tuple[int, ...]] | None = [] if keep_counts else None
        self.area = [0.0] * n_counts
        self.violation_counts: dict[str, int] = {}
        self.violations: list[Violation] = []
        self._sample_count = 0

    def advance(self, t0: float, t1: float, counts: Sequence[int], value_fn) -> None:
        """Account for the interval [t0, t1) spent in the current state."""
        lo = t0 if t0 > self.warmup else self.warmup
        if t1 > lo:
            dt = t1 - lo
            area = self.area
            for k, v in enumerate(counts):
                if v:
                    area[k] += v * dt
        final = t1 >= self.cfg.horizon
        if self.next_sample < t1 or (final and self.next_sample <= t1):
            v = value_fn()
            xb = tuple(self.project(counts))
            xs = tuple(counts)
            total = sum(xs)
            while self.next_sample < t1 or (final and self.next_sample <= t1):
                self.times.append(self.next_sample)
                self.totals.append(total)
                self.values.append(v)
                self.xbar.append(xb)
                if self.x is not None:
                    self.x.append(xs)
                self._sample_count += 1
                self.next_sample = self._sample_count * self.cfg.sample_interval

    def violation(self, t: float, kind: str, detail: str) -> None:
        self.violation_counts[kind] = self.violation_counts.get(kind, 0) + 1
        if len(self.violations) < MAX_RECORDED_VIOLATIONS:
            self.violations.append(Violation(t, kind, detail))


def state_violations(policy: Policy, state: ExpandedState, d: PolicyDecision
                     ) -> list[tuple[str, str]]:
    """Invariant breaches visible at one state (job conservation is checked separately).

    * activation: at most unit mass per server, only on its own duplicates;
    * empty_bottleneck: some bottleneck is empty while the network is not;
    * Q, held_bottleneck, bottleneck_service: the JSQ-AS invariant set, bottlenecks never
      held, and full bottleneck service once every route is dominant.
    """
    net = policy.net
    x = state.x
    total = sum(x)
    out = []
    for n, dist in d.activation.items():
        group = net.duplicate_groups[n]
        if sum(dist.values()) > 1 + 1e-9 or any(k not in group for k in dist):
            out.append(("activation", f"server {n}: {dist}"))
    if not isinstance(policy, (JSRPolicy, JSQASPolicy)):
        return out
    reg = d.regime
    if total > 0 and any(x[k] == 0 for k in reg.bottlenecks):
        out.append(("empty_bottleneck", f"x={x} bottlenecks={list(reg.bottlenecks)}"))
    if isinstance(policy, JSQASPolicy):
        subs = net.subservers
        bad = [s.name for s in subs if s.succ is not None and x[s.succ] > x[s.k]]
        if bad:
            out.append(("Q", f"x={x} successor longer at {bad}"))
        if any(k in state.held for k in reg.bottlenecks):
            out.append(("held_bottleneck", f"x={x} held={sorted(state.held)}"))
        if total > 0 and reg.route_positions and all(l > 0 for l in reg.route_positions):
            rates = net.spec.rates
            served = sum(rates[subs[k].server] * d.activation[subs[k].server].get(k, 0.0)
                         for k in reg.bottlenecks if x[k] > 0 and k not in state.held)
            expected = sum(rates[n] for n in {subs[k].server for k in reg.bottlenecks})
            if abs(served - expected) > 1e-9:
                out.append(("bottleneck_service", f"x={x} served={served} expected={expected}"))
    return out


def _simulate_expanded(policy: Policy, cfg: SimConfig, replication: int) -> SimTrace:
    net = policy.net
    spec = net.spec
    if cfg.initial:
        state = initial_split(net, cfg.initial, cfg.split_mode)
    else:
        state = ExpandedState([0] * net.size)
    arr_rng = [stream_rng(cfg.seed, replication, 1 + i) for i in range(len(spec.classes))]
    svc_rng = stream_rng(cfg.seed, replication, 0)
    dec_rng = stream_rng(cfg.seed, replication, 1000)
    eng = _Expanded(policy, state, dec_rng)
    eng.counters["arrivals"] = state.total  # initial jobs count as arrivals for conservation
    server_index = {s.id: i for i, s in enumerate(spec.servers)}
    sub_server = [server_index[s.server] for s in net.subservers]
    n_servers = len(spec.servers)

    def xbar_of(x):
        out = [0] * n_servers
        for k, v in enumerate(x):
            if v:
                out[sub_server[k]] += v
        return out

    rec = _Recorder(cfg, net.size, xbar_of, keep_counts=True)
    checked: dict[tuple, list[tuple[str, str]]] = {}
    counters = eng.counters
    value_fn = lambda: eng.decision.regime.value if eng.decision.regime is not None \
        else policy.value(state.x)  # noqa: E731

    lams = [c.lam for c in spec.classes]
    class_ids = [c.id for c in spec.classes]
    next_arr = [rng.expovariate(l) if l > 0 else math.inf for rng, l in zip(arr_rng, lams)]
    t = 0.0
    horizon = cfg.horizon
    x = state.x
    while True:
        comps, rate = eng.completions()
        t_svc = t + svc_rng.expovariate(rate) if rate > 0 else math.inf
        if lams:
            ci = min(range(len(lams)), key=next_arr.__getitem__)
            t_arr = next_arr[ci]
        else:
            ci, t_arr = None, math.inf
        t_new = t_svc if t_svc < t_arr else t_arr
        if t_new > horizon:
            rec.advance(t, horizon, x, value_fn)
            break
        rec.advance(t, t_new, x, value_fn)
        t = t_new
        if t_arr <= t_svc:
            eng.arrival(class_ids[ci])
            next_arr[ci] = t + arr_rng[ci].expovariate(lams[ci])
        else:
            u = svc_rng.random() * rate
            acc = 0.0
            k = comps[-1][1]
            for r, kk in comps:
                acc += r
                if u < acc:
                    k = kk
                    break
            eng.completion(k)
        eng.after_event()
        if cfg.check_invariants:
            if counters["arrivals"] - counters["departures"] != sum(x):
                rec.violation(t, "conservation", f"arrivals-departures="
                              f"{counters['arrivals'] - counters['departures']} total={sum(x)}")
            key = (tuple(x), frozenset(state.held))
            found = checked.get(key)
            if found is None:
                if len(checked) >= 200_000:
                    checked.clear()
                found = checked[key] = state_violations(policy, state, eng.decision)
            for kind, detail in found:
                rec.violation(t, kind, detail)

    return _finish(rec, policy.name, spec, net.names, counters, cfg, replication)


def _finish(rec: _Recorder, name, spec, sub_names, counters, cfg, replication) -> SimTrace:
    window = cfg.horizon - rec.warmup
    area_xbar = rec.project(rec.area)
    xbar = np.array(rec.xbar, dtype=np.int64).reshape(len(rec.times), len(spec.servers))
    return SimTrace(
        policy=name,
        server_ids=spec.server_ids,
        subserver_names=sub_names,
        times=np.array(rec.times),
        totals=np.array(rec.totals, dtype=np.int64),
        values=np.array(rec.values, dtype=float),
        xbar=xbar,
        x=np.array(rec.x, dtype=np.int64).reshape(len(rec.times), -1) if rec.x is not None else None,
        counters=dict(counters),
        violation_counts=dict(rec.violation_counts),
        violations=list(rec.violations),
        horizon=cfg.horizon,
        warmup=rec.warmup,
        time_avg_total=sum(rec.area) / window,
        time_avg_xbar={n: float(a / window) for n, a in zip(spec.server_ids, area_xbar)},
        seed=cfg.seed,
        replication=replication,
    )


def _simulate_original(policy: JSQPolicy, cfg: SimConfig, replication: int) -> SimTrace:
    spec = policy.spec
    servers = spec.server_ids
    index = {n: i for i, n in enumerate(servers)}
    rates = [s.rate for s in spec.servers]
    queues: list[deque[str]] = [deque() for _ in servers]
    counts = {n: 0 for n in servers}
    counters = {"arrivals": 0, "departures": 0, "holds": 0, "releases": 0, "switches": 0,
                "events": 0}
    if cfg.initial:
        if len(spec.classes) != 1:
            raise ValueError("initial counts for JSQ are supported for single-class networks")
        cls = spec.classes[0].id
        for n, v in cfg.initial.items():
            queues[index[n]].extend([cls] * int(v))
            counts[n] += int(v)
            counters["arrivals"] += int(v)

    arr_rng = [stream_rng(cfg.seed, replication, 1 + i) for i in range(len(spec.classes))]
    svc_rng = stream_rng(cfg.seed, replication, 0)
    dec_rng = stream_rng(cfg.seed, replication, 1000)
    rec = _Recorder(cfg, len(servers), list, keep_counts=False)
    lams = [c.lam for c in spec.classes]
    next_arr = [rng.expovariate(l) if l > 0 else math.inf for rng, l in zip(arr_rng, lams)]
    t = 0.0
    total = sum(counts.values())

    def enter(node: str, cls: str) -> None:
        nonlocal total
        target = sample(policy.targets(node, cls, counts), dec_rng)
        if target is None:
            counters["departures"] += 1
            total -= 1
        else:
            queues[index[target]].append(cls)
            counts[target] += 1

    nan = lambda: math.nan  # noqa: E731
    while True:
        busy = [i for i, q in enumerate(queues) if q]
        rate = sum(rates[i] for i in busy)
        t_svc = t + svc_rng.expovariate(rate) if rate > 0 else math.inf
        ci = min(range(len(lams)), key=next_arr.__getitem__) if lams else None
        t_arr = next_arr[ci] if ci is not None else math.inf
        t_new = min(t_svc, t_arr)
        xb = [counts[n] for n in servers]
        if t_new > cfg.horizon:
            rec.advance(t, cfg.horizon, xb, nan)
            break
        rec.advance(t, t_new, xb, nan)
        t = t_new
        if t_arr <= t_svc:
            c = spec.classes[ci]
            counters["arrivals"] += 1
            total += 1
            enter(c.origin, c.id)
            next_arr[ci] = t + arr_rng[ci].expovariate(lams[ci])
        else:
            u = svc_rng.random() * rate
            acc = 0.0
            i = busy[-1]
            for b in busy:
                acc += rates[b]
                if u < acc:
                    i = b
                    break
            cls = queues[i].popleft()
            counts[servers[i]] -= 1
            enter(servers[i], cls)
        counters["events"] += 1
        if cfg.check_invariants and counters["arrivals"] - counters["departures"] != total:
            rec.violation(t, "conservation", "job count mismatch")
    return _finish(rec, policy.name, spec, None, counters, cfg, replication)


def simulate(policy, cfg: SimConfig, replication: int = 0) -> SimTrace:
    """Run one replication from the configured initial state to the horizon."""
    # the event loop allocates many short-lived tuples but no cycles; pausing
    # the cyclic collector saves about a quarter of the run time
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        if isinstance(policy, JSQPolicy):
            return _simulate_original(policy, cfg, replication)
        return _simulate_expanded(policy, cfg, replication)
    finally:
        if was_enabled:
            gc.enable()


def _run_one(args):
    policy, cfg, rep = args
    return simulate(policy, cfg, rep)


def simulate_many(policy, cfg: SimConfig, workers: int | None = None) -> list[SimTrace]:
    """All replications; fans out over processes when QNET_MDI_THREADS > 1."""
    if workers is None:
        workers = int(os.environ.get("QNET_MDI_THREADS", "1") or 1)
    jobs = [(policy, cfg, rep) for rep in range(cfg.replications)]
    if workers <= 1 or cfg.replications == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def _slope(t: np.ndarray, y: np.ndarray) -> float:
    if len(t) < 2:
        return 0.0
    tc = t - t.mean()
    denom = float(tc @ tc)
    return float(tc @ (y - y.mean()) / denom) if denom > 0 else 0.0


def _mean_ci(vals: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(vals, dtype=float)
    if len(a) < 2:
        return float(a.mean()), 0.0
    half = stats.t.ppf(0.975, len(a) - 1) * a.std(ddof=1) / math.sqrt(len(a))
    return float(a.mean()), float(half)


def classify(traces: Sequence[SimTrace], warmup_fraction: float | None = None
             ) -> StabilityVerdict:
    """Slope test on total jobs after warmup, pooled across replications."""
    if not traces:
        raise ValueError("at least one trace is required")
    slopes, means = [], []
    per_server: dict[str, list[float]] = {n: [] for n in traces[0].server_ids}
    for tr in traces:
        start = tr.warmup if warmup_fraction is None else warmup_fraction * tr.horizon
        mask = tr.times >= start
        t = tr.times[mask]
        slopes.append(_slope(t, tr.totals[mask].astype(float)))
        means.append(tr.time_avg_total if warmup_fraction is None
                     else float(tr.totals[mask].mean()) if mask.any() else 0.0)
        for i, n in enumerate(tr.server_ids):
            per_server[n].append(_slope(t, tr.xbar[mask, i].astype(float)))
    slope, ci = _mean_ci(slopes)
    mean_total = float(np.mean(means))
    if slope - ci > UNSTABLE_SLOPE:
        verdict = "unstable"
    elif abs(slope) + ci < STABLE_SLOPE and math.isfinite(mean_total):
        verdict = "stable"
    else:
        verdict = "inconclusive"
    return StabilityVerdict(verdict, slope, ci, mean_total, len(traces),
                            {n: _mean_ci(v) for n, v in per_server.items()})
