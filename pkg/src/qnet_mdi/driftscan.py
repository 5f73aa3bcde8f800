"""Exhaustive negative-drift check of a policy over all small states.

Every state with at most ``max_total`` jobs is visited.  For states with more
than ``M`` jobs the drift of the policy's test function must be at most
``-epsilon`` (plus a 1e-9 tolerance).  Two drift notions are available:

* ``mean``: the regime-wise linear drift, coefficients of the current regime
  times the mean velocity of every subserver;
* ``generator``: the exact infinitesimal change of V, summing
  ``rate * (V(next) - V(x))`` over all transitions, release cascades included.

Alongside the drift, the structural lemmas the stability argument relies on are
asserted: no empty bottleneck at a nonempty state, and for the single-class
function on the invariant set, no held bottleneck and an arrival target off
the dominant set unless every route is dominant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .expansion import ExpandedNetwork, ExpandedState
from .policies import JSQASPolicy, Policy
from .simulator import settled_transitions
from .testfn import generator_drift, mean_drift, mean_velocity

DRIFT_TOL = 1e-9
DEFAULT_MAX_TOTAL = 6
MAX_STORED_FAILURES = 1000


@dataclass
class ScanConfig:
    max_total: int = DEFAULT_MAX_TOTAL
    epsilon: float = 1e-6
    M: int = 0
    mode: str = "generator"

    def __post_init__(self):
        if self.mode not in ("mean", "generator"):
            raise ValueError(f"mode must be 'mean' or 'generator', not {self.mode!r}")
        if not self.max_total >= self.M >= 0:
            raise ValueError("need max_total >= M >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class DriftFailure:
    state: tuple[int, ...]
    drift: float


@dataclass
class LemmaFailure:
    state: tuple[int, ...]
    lemma: str
    detail: str


@dataclass
class ScanReport:
    config: ScanConfig
    names: list[str]
    states_checked: int = 0
    states_tested: int = 0
    worst_state: tuple[int, ...] | None = None
    worst_drift: float = float("-inf")
    failure_count: int = 0
    failures: list[DriftFailure] = field(default_factory=list)
    lemma_failure_count: int = 0
    lemma_failures: list[LemmaFailure] = field(default_factory=list)
    # largest |x| among failing states; every |x| above it passes
    max_failing_total: int | None = None
    worst_by_total: dict[int, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failure_count == 0 and self.lemma_failure_count == 0

    @property
    def smallest_M(self) -> int | None:
        """Smallest exemption bound making every scanned drift check pass.

        ``None`` when even the largest scanned total fails, i.e. no bound
        inside the scanned range works.
        """
        if self.max_failing_total is None:
            return 0
        if self.max_failing_total >= self.config.max_total:
            return None
        return self.max_failing_total

    def merge(self, other: "ScanReport") -> "ScanReport":
        out = ScanReport(self.config, self.names)
        for rep in (self, other):
            out.states_checked += rep.states_checked
            out.states_tested += rep.states_tested
            if rep.worst_state is not None and rep.worst_drift > out.worst_drift:
                out.worst_state, out.worst_drift = rep.worst_state, rep.worst_drift
            out.failure_count += rep.failure_count
            out.failures.extend(rep.failures)
            out.lemma_failure_count += rep.lemma_failure_count
            out.lemma_failures.extend(rep.lemma_failures)
            if rep.max_failing_total is not None:
                out.max_failing_total = max(out.max_failing_total or 0, rep.max_failing_total)
            for m, d in rep.worst_by_total.items():
                out.worst_by_total[m] = max(out.worst_by_total.get(m, d), d)
        out.failures = sorted(out.failures, key=lambda f: f.state)[:MAX_STORED_FAILURES]
        out.lemma_failures = out.lemma_failures[:MAX_STORED_FAILURES]
        return out

    def to_dict(self) -> dict:
        named = lambda s: dict(zip(self.names, s))  # noqa: E731
        return {
            "mode": self.config.mode,
            "max_total": self.config.max_total,
            "epsilon": self.config.epsilon,
            "M": self.config.M,
            "passed": self.passed,
            "states_checked": self.states_checked,
            "states_tested": self.states_tested,
            "worst": None if self.worst_state is None else
            {"state": named(self.worst_state), "drift": self.worst_drift},
            "failure_count": self.failure_count,
            "failures": [{"state": named(f.state), "drift": f.drift} for f in self.failures],
            "lemma_failure_count": self.lemma_failure_count,
            "lemma_failures": [{"state": named(f.state), "lemma": f.lemma, "detail": f.detail}
                               for f in self.lemma_failures],
            "smallest_M": self.smallest_M,
            "worst_drift_by_total": {str(m): d for m, d in sorted(self.worst_by_total.items())},
        }


def _compositions(n: int, total: int) -> Iterator[tuple[int, ...]]:
    """All length-n nonnegative vectors summing to ``total``, lexicographically descending."""
    if n == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(n - 1, total - first):
            yield (first,) + rest


def in_Q(net: ExpandedNetwork, x: Sequence[int]) -> bool:
    """Membership in the set where no subserver is longer than its route predecessor."""
    return all(s.succ is None or x[s.succ] <= x[s.k] for s in net.subservers)


def enumerate_states(net: ExpandedNetwork, max_total: int, restrict_Q: bool = False
                     ) -> Iterator[tuple[int, ...]]:
    """Count vectors with at most ``max_total`` jobs, by increasing total."""
    if max_total < 0:
        raise ValueError("max_total must be nonnegative")
    for total in range(max_total + 1):
        for x in _compositions(net.size, total):
            if not restrict_Q or in_Q(net, x):
                yield x


def lemma_checks(policy: Policy, state: ExpandedState) -> list[tuple[str, str]]:
    """Structural facts the drift argument needs at ``state``."""
    x = state.x
    reg = policy.regime(x)
    if reg is None:
        return []
    out = []
    if sum(x) > 0:
        empty = [k for k in reg.bottlenecks if x[k] == 0]
        if empty:
            out.append(("empty_bottleneck", f"bottlenecks {empty} are empty"))
    if isinstance(policy, JSQASPolicy):
        held = [k for k in reg.bottlenecks if k in state.held]
        if held:
            out.append(("held_bottleneck", f"bottlenecks {held} are held"))
        firsts = policy.firsts
        lens = reg.route_positions
        if sum(x) > 0 and not all(l > 0 for l in lens):
            m = min(x[k] for k in firsts)
            shortest = [r for r, k in enumerate(firsts) if x[k] == m]
            dominant_shortest = [r for r in shortest if lens[r] > 0]
            if dominant_shortest:
                out.append(("shortest_route_dominant",
                            f"routes {dominant_shortest} have the shortest entry and are dominant"))
    return out


def state_drift(policy: Policy, state: ExpandedState, mode: str) -> float:
    reg = policy.regime(state.x)
    if mode == "mean":
        decision = policy.decide(state)
        v = mean_velocity(policy.net, state, decision)
        return mean_drift(state, reg, v).drift
    return generator_drift(state, settled_transitions(policy, state), policy.value)


def scan(policy: Policy, cfg: ScanConfig, shard: tuple[int, int] = (0, 1)) -> ScanReport:
    """Check every state (of shard ``i`` out of ``n``) and collect failures."""
    net = policy.net
    idx, n_shards = shard
    restrict = isinstance(policy, JSQASPolicy)
    report = ScanReport(cfg, net.names)
    threshold = -cfg.epsilon + DRIFT_TOL
    for i, x in enumerate(enumerate_states(net, cfg.max_total, restrict)):
        if i % n_shards != idx:
            continue
        state = policy.scan_state(x)
        report.states_checked += 1
        for lemma, detail in lemma_checks(policy, state):
            report.lemma_failure_count += 1
            if len(report.lemma_failures) < MAX_STORED_FAILURES:
                report.lemma_failures.append(LemmaFailure(x, lemma, detail))
        total = sum(x)
        if total <= cfg.M:
            continue
        report.states_tested += 1
        d = state_drift(policy, state, cfg.mode)
        report.worst_by_total[total] = max(report.worst_by_total.get(total, d), d)
        if d > report.worst_drift:
            report.worst_state, report.worst_drift = x, d
        if d > threshold:
            report.failure_count += 1
            report.max_failing_total = max(report.max_failing_total or 0, total)
            if len(report.failures) < MAX_STORED_FAILURES:
                report.failures.append(DriftFailure(x, d))
    return report
