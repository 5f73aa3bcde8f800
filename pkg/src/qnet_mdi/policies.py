"""Control policies behind one decision contract.

A policy maps a state to a :class:`PolicyDecision`: arrival routing and
discharge routing as probability distributions, the activation (which
duplicate each physical server serves), the set of subservers whose finished
job would be held, and any imaginary switches.  Distributions, not samples,
are returned so the drift machinery can consume them exactly; the simulator
samples from them with its own generator.

JSR and JSQ-AS receive no rate arguments at all; only the Bernoulli baseline
depends on model data (through its flow certificate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .expansion import ExpandedNetwork, ExpandedState, expand
from .network import MultiClassUnsupported, NetworkSpec, all_routes
from .stabilizability import FlowCertificate, bernoulli_policy
from .testfn import (
    CACHE_LIMIT,
    MultiClassParams,
    MultiClassTestFunction,
    RegimeInfo,
    SingleClassParams,
    SingleClassTestFunction,
)


@dataclass
class PolicyDecision:
    arrival_routing: dict[Any, dict[Any, float]]
    discharge_routing: dict[Any, dict[Any, float]]
    activation: dict[str, dict[int, float]]
    holds: frozenset[int] = frozenset()
    switches: tuple[tuple[int, int], ...] = ()
    regime: RegimeInfo | None = None
    # scratch space for consumers that derive data from a decision at its state
    derived: dict = field(default_factory=dict, repr=False, compare=False)

    def active_map(self) -> dict[str, int]:
        """The most-weighted duplicate of every busy server."""
        act = self.derived.get("active")
        if act is None:
            act = self.derived["active"] = {n: max(dist, key=dist.get)
                                            for n, dist in self.activation.items() if dist}
        return act


class _LazyDischarge(dict):
    """Discharge distributions computed on first access."""

    def __init__(self, fn):
        super().__init__()
        self._fn = fn

    def __missing__(self, k):
        v = self[k] = self._fn(k)
        return v


def _uniform(items: Sequence) -> dict:
    p = 1.0 / len(items)
    return {i: p for i in items}


def _argmin(items: Sequence[int], x: Sequence[int]) -> list[int]:
    m = min(x[k] for k in items)
    return [k for k in items if x[k] == m]


class Policy:
    """Common surface consumed by the simulator and the drift scan."""

    name = "policy"
    net: ExpandedNetwork

    def decide(self, state: ExpandedState) -> PolicyDecision:
        raise NotImplementedError

    def regime(self, x: Sequence[int]) -> RegimeInfo | None:
        return None

    def value(self, x: Sequence[int]) -> float:
        reg = self.regime(x)
        return math.nan if reg is None else reg.value

    def discharge(self, x: Sequence[int], k: int) -> dict[int | None, float]:
        return {self.net.subservers[k].succ: 1.0}

    def scan_state(self, x: Sequence[int]) -> ExpandedState:
        return ExpandedState(list(x))


def _route_faithful(net: ExpandedNetwork) -> dict[int, dict[int | None, float]]:
    return {s.k: {s.succ: 1.0} for s in net.subservers}


def _longest_nonempty(group: Sequence[int], x: Sequence[int], held=()) -> int | None:
    best = None
    for k in group:
        if x[k] > 0 and k not in held and (best is None or x[k] > x[best]):
            best = k
    return best


class JSRPolicy(Policy):
    """Join-the-shortest-route routing with bottleneck-first service."""

    name = "jsr"

    def __init__(self, net: ExpandedNetwork, params: MultiClassParams):
        params.check(net)
        self.net = net
        self.params = params
        self.tf = MultiClassTestFunction(net, params)
        self._discharge = _route_faithful(net)
        self._class_routes = [(c, list(net.class_routes[c])) for c in net.spec.class_ids]
        self._n_routes = {c: len(rs) for c, rs in net.class_routes.items()}
        self._cache: dict[tuple[int, ...], PolicyDecision] = {}

    def regime(self, x):
        return self.tf.regime(x)

    def decide(self, state: ExpandedState) -> PolicyDecision:
        # the decision is a function of the counts alone
        key = tuple(state.x)
        d = self._cache.get(key)
        if d is None:
            if len(self._cache) >= CACHE_LIMIT:
                self._cache.clear()
            d = self._cache[key] = self._decide(key)
        return d

    def _decide(self, x: tuple[int, ...]) -> PolicyDecision:
        net = self.net
        reg = self.tf.regime(x)
        fvals, fpos = reg.route_values, reg.route_positions
        chains = net.route_subservers

        arrival, i_c = {}, {}
        for cls, routes in self._class_routes:
            fmin = min(fvals[r] for r in routes)
            tol = 1e-12 * max(1.0, abs(fmin))
            cands = [r for r in routes if fvals[r] <= fmin + tol]
            pmax = max(fpos[r] for r in cands)
            chosen = [chains[r][0] for r in cands if fpos[r] == pmax]
            arrival[cls] = _uniform(chosen)
            i_c[cls] = pmax

        bottlenecks = set(reg.bottlenecks)
        activation = {}
        subs = net.subservers
        for n, group in net.duplicate_groups.items():
            bs = [k for k in group if k in bottlenecks and x[k] > 0]
            if bs:
                keys = {k: i_c[subs[k].cls] + self._n_routes[subs[k].cls] for k in bs}
                m = min(keys.values())
                activation[n] = _uniform([k for k in bs if keys[k] == m])
            else:
                k = _longest_nonempty(group, x)
                activation[n] = {} if k is None else {k: 1.0}
        return PolicyDecision(arrival, self._discharge, activation, frozenset(), (), reg)


class JSQASPolicy(Policy):
    """Decentralized JSQ routing with artificial spillback (single class)."""

    name = "jsqas"

    def __init__(self, net: ExpandedNetwork, params: SingleClassParams = SingleClassParams()):
        if len(net.spec.classes) != 1:
            raise MultiClassUnsupported("JSQ-AS is defined for single-class networks")
        self.net = net
        self.params = params
        self.tf = SingleClassTestFunction(net, params)
        self.cls = net.spec.classes[0].id
        self.firsts = net.first_subservers(self.cls)
        # discharge candidates: every duplicate of every downstream server
        self.candidates: list[tuple[int, ...] | None] = []
        for s in net.subservers:
            if s.succ is None:
                self.candidates.append(None)
                continue
            outs = [v for v in net.spec.successors(s.server) if v in net.duplicate_groups]
            self.candidates.append(tuple(k for v in outs for k in net.duplicate_groups[v]))
        self._cache: dict[tuple, tuple] = {}

    def regime(self, x):
        return self.tf.regime(x)

    @staticmethod
    def hold_rule(x_k: int, x_succ: int | None) -> bool:
        """A finished job waits while the route successor is at least as long."""
        return x_succ is not None and x_succ >= x_k

    @staticmethod
    def route_rule(counts: Mapping[int, int]) -> dict[int, float]:
        m = min(counts.values())
        return _uniform([k for k, v in counts.items() if v == m])

    def discharge(self, x, k):
        cands = self.candidates[k]
        if cands is None:
            return {None: 1.0}
        return self.route_rule({j: x[j] for j in cands})

    def held_view(self, x: Sequence[int]) -> set[int]:
        subs = self.net.subservers
        return {s.k for s in subs if x[s.k] > 0 and s.succ is not None
                and self.hold_rule(x[s.k], x[s.succ])}

    def scan_state(self, x):
        # counts-only view: a subserver whose finished job would be held is held
        return ExpandedState(list(x), self.held_view(x))

    def decide(self, state: ExpandedState) -> PolicyDecision:
        # everything but the switch record depends on (counts, held set) only
        key = (tuple(state.x), frozenset(state.held))
        hit = self._cache.get(key)
        if hit is None:
            if len(self._cache) >= CACHE_LIMIT:
                self._cache.clear()
            hit = self._cache[key] = self._decide(*key)
        base, eligible = hit
        dominant = base.regime.coefficients
        switches = []
        for n, dist in base.activation.items():
            if not dist:
                continue
            chosen = next(iter(dist))
            prev = state.active.get(n)
            if (prev is not None and prev != chosen and prev in eligible[n]
                    and prev not in dominant and chosen in dominant):
                switches.append((prev, chosen))
        if not switches:
            return base
        return PolicyDecision(base.arrival_routing, base.discharge_routing, base.activation,
                              base.holds, tuple(switches), base.regime)

    def _decide(self, x: tuple[int, ...], held: frozenset[int]):
        net = self.net
        reg = self.tf.regime(x)
        arrival = {self.cls: _uniform(_argmin(self.firsts, x))}
        holds = frozenset(self.held_view(x))
        discharge = _LazyDischarge(lambda k: self.discharge(x, k))

        bottlenecks, dominant = set(reg.bottlenecks), reg.coefficients
        activation, eligible_by = {}, {}
        for n, group in net.duplicate_groups.items():
            eligible = [k for k in group if x[k] > 0 and k not in held]
            eligible_by[n] = frozenset(eligible)
            if not eligible:
                activation[n] = {}
                continue
            chosen = next((k for k in eligible if k in bottlenecks),
                          next((k for k in eligible if k in dominant), eligible[0]))
            activation[n] = {chosen: 1.0}
        return PolicyDecision(arrival, discharge, activation, holds, (), reg), eligible_by


class BernoulliPolicy(Policy):
    """State-independent route sampling from a flow certificate (model-data dependent)."""

    name = "bernoulli"

    def __init__(self, net: ExpandedNetwork, cert: FlowCertificate):
        self.net = net
        probs = bernoulli_policy(cert)
        first = {net.routes[r]: net.route_subservers[r][0] for r in range(len(net.routes))}
        self.arrival = {cls: {first[r]: p for r, p in dist.items() if p > 0}
                        for cls, dist in probs.items()}
        for c in net.spec.class_ids:
            self.arrival.setdefault(c, _uniform(net.first_subservers(c)))
        self._discharge = _route_faithful(net)

    def decide(self, state: ExpandedState) -> PolicyDecision:
        x = state.x
        activation = {}
        for n, group in self.net.duplicate_groups.items():
            k = _longest_nonempty(group, x)
            activation[n] = {} if k is None else {k: 1.0}
        return PolicyDecision(self.arrival, self._discharge, activation)


class JSQPolicy:
    """Plain join-the-shortest-queue on the original network (baseline)."""

    name = "jsq"

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.exits: set[tuple[str, str]] = set()
        nexts: dict[tuple[str, str], set[str]] = {}
        for cls, routes in all_routes(spec).items():
            origin = spec.get_class(cls).origin
            for r in routes:
                path = (origin,) + r.servers
                for u, v in zip(path, path[1:]):
                    nexts.setdefault((u, cls), set()).add(v)
                self.exits.add((r.servers[-1], cls))
        self.next_servers = {key: sorted(vs) for key, vs in nexts.items()}

    def targets(self, node: str, cls: str, xbar: Mapping[str, int]) -> dict[str | None, float]:
        if (node, cls) in self.exits:
            return {None: 1.0}
        cands = self.next_servers[(node, cls)]
        m = min(xbar[v] for v in cands)
        return _uniform([v for v in cands if xbar[v] == m])

    def decide(self, xbar: Mapping[str, int]) -> PolicyDecision:
        arrival = {c.id: self.targets(c.origin, c.id, xbar) for c in self.spec.classes}
        discharge = {key: self.targets(key[0], key[1], xbar)
                     for key in set(self.next_servers) | self.exits
                     if key[0] in xbar}
        return PolicyDecision(arrival, discharge, {})


def jsr_decide(state: ExpandedState, net: ExpandedNetwork,
               params: MultiClassParams) -> PolicyDecision:
    return JSRPolicy(net, params).decide(state)


def jsqas_decide(state: ExpandedState, net: ExpandedNetwork,
                 params: SingleClassParams = SingleClassParams()) -> PolicyDecision:
    return JSQASPolicy(net, params).decide(state)


def jsq_decide(xbar: Mapping[str, int], spec: NetworkSpec) -> PolicyDecision:
    return JSQPolicy(spec).decide(xbar)


def bernoulli_decide(cert: FlowCertificate, net: ExpandedNetwork,
                     state: ExpandedState | None = None) -> PolicyDecision:
    state = state or ExpandedState([0] * net.size)
    return BernoulliPolicy(net, cert).decide(state)


def make_policy(spec: NetworkSpec, config: Mapping[str, Any]):
    """Instantiate a policy from a config block such as ``{"policy": "jsr", "alpha": 0.75}``."""
    name = str(config.get("policy", "")).lower().replace("-", "")
    if name == "jsq":
        return JSQPolicy(spec)
    net = expand(spec)
    if name == "jsr":
        base = MultiClassParams.default_for(net)
        a = float(config.get("alpha", base.alpha))
        return JSRPolicy(net, MultiClassParams(a, float(config.get("beta", a)),
                                               float(config.get("gamma", base.gamma))))
    if name == "jsqas":
        return JSQASPolicy(net, SingleClassParams(float(config.get("delta", 0.1))))
    if name == "bernoulli":
        from .stabilizability import check_stabilizable

        res = check_stabilizable(spec)
        if res.certificate is None:
            raise ValueError("network is not stabilizable; no Bernoulli split exists")
        return BernoulliPolicy(net, res.certificate)
    raise ValueError(f"unknown policy {config.get('policy')!r}")
