"""Piecewise-linear test functions on the expanded network.

Two constructions are provided:

* the multi-class nested max (route prefix -> route subset -> class subset)
  weighted by ``alpha``, ``beta``, ``gamma``;
* the single-class max over upstream-closed subserver sets weighted by
  ``(1 + (|K| - 1) * delta) / |K|``.

Both return a :class:`RegimeInfo` that names the maximizing (dominant) sets,
their bottlenecks and the linear coefficients of ``V`` on that piece.  Ties
between maximizers go to the larger set, then to the canonical order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .expansion import ExpandedNetwork, ExpandedState

TIE_TOL = 1e-12
DEFAULT_EPSILON = 1e-6
# regimes are memoized per state; the cache is dropped when it grows past this
CACHE_LIMIT = 200_000


class InadmissibleParams(ValueError):
    """Test-function parameters are outside the admissible range for the network."""


class InconsistentRates(ValueError):
    pass


def _cmp(a: float, b: float) -> int:
    tol = TIE_TOL * max(1.0, abs(a), abs(b))
    if a > b + tol:
        return 1
    if a < b - tol:
        return -1
    return 0


@dataclass(frozen=True)
class MultiClassParams:
    alpha: float = 0.75
    beta: float = 0.75
    gamma: float = 0.75

    def check(self, net: ExpandedNetwork) -> "MultiClassParams":
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InadmissibleParams(f"{name}={v} must lie in (0, 1)")
        n_routes, n_classes = len(net.routes), len(net.spec.classes)
        if self.alpha != self.beta:
            raise InadmissibleParams("alpha and beta must be equal")
        if self.alpha < (n_routes - 1) / n_routes - 1e-15:
            raise InadmissibleParams(f"alpha={self.alpha} < (|R|-1)/|R| with |R|={n_routes}")
        if self.gamma < (n_classes - 1) / n_classes - 1e-15:
            raise InadmissibleParams(f"gamma={self.gamma} < (|C|-1)/|C| with |C|={n_classes}")
        return self

    @classmethod
    def default_for(cls, net: ExpandedNetwork) -> "MultiClassParams":
        """3/4 for every parameter, raised to the admissible bound when that is larger."""
        n_routes, n_classes = len(net.routes), len(net.spec.classes)
        a = max(0.75, (n_routes - 1) / n_routes)
        return cls(a, a, max(0.75, (n_classes - 1) / n_classes))


@dataclass(frozen=True)
class SingleClassParams:
    delta: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta={self.delta} must lie in (0, 1)")

    def coef(self, m: int) -> float:
        return (1.0 + (m - 1) * self.delta) / m


@dataclass
class RegimeInfo:
    dominant_classes: tuple[str, ...]
    dominant_routes: dict[str, tuple[int, ...]]
    dominant_subservers: dict[str, tuple[int, ...]]
    bottlenecks: tuple[int, ...]
    coefficients: dict[int, float]
    value: float
    # per route (all routes, not only dominant ones): f_r and the 1-based
    # position of its maximizing prefix; for the single-class function the
    # position is the prefix length inside K and the value is unused (0.0)
    route_values: tuple[float, ...] = ()
    route_positions: tuple[int, ...] = ()

    @property
    def dominant(self) -> frozenset[int]:
        return frozenset(self.coefficients)

    def linear_value(self, x: Sequence[int]) -> float:
        return sum(c * x[k] for k, c in self.coefficients.items())

    def to_dict(self, net: ExpandedNetwork) -> dict:
        name = lambda k: net.subservers[k].name  # noqa: E731
        return {
            "value": self.value,
            "dominant_classes": list(self.dominant_classes),
            "dominant_routes": {c: [list(net.routes[r].servers) for r in rs]
                                for c, rs in self.dominant_routes.items()},
            "dominant_subservers": {c: [name(k) for k in ks]
                                    for c, ks in self.dominant_subservers.items()},
            "bottlenecks": [name(k) for k in self.bottlenecks],
            "coefficients": {name(k): c for k, c in sorted(self.coefficients.items())},
        }


@dataclass
class DriftReport:
    state: tuple[int, ...]
    regime: RegimeInfo
    velocity: list[float]
    drift: float
    epsilon: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.drift <= -self.epsilon + 1e-9


def f_route(x: Sequence[int], chain: Sequence[int], alpha: float) -> tuple[float, int]:
    """Max over positions of ``alpha**(i-1) * prefix_sum(i)``; ties -> largest i."""
    best, pos = -1.0, 0
    s, w = 0, 1.0
    for i, k in enumerate(chain, start=1):
        s += x[k]
        val = w * s
        if _cmp(val, best) >= 0:
            best, pos = max(val, best), i
        w *= alpha
    return best, pos


def _best_prefix_count(values: Sequence[float], weight: float) -> tuple[float, int, list[int]]:
    """max over m >= 1 of weight**(m-1) * (sum of the m largest values).

    Returns the value, m, and the chosen indices (canonical order on ties).
    """
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    best, best_m = -1.0, 0
    cum, w = 0.0, 1.0
    for m, i in enumerate(order, start=1):
        cum += values[i]
        val = w * cum
        if _cmp(val, best) >= 0:
            best, best_m = max(val, best), m
        w *= weight
    return best, best_m, sorted(order[:best_m])


class MultiClassTestFunction:
    """Evaluates the nested max; precomputes the network structure once."""

    def __init__(self, net: ExpandedNetwork, params: MultiClassParams):
        self.net = net
        self.params = params
        self.class_ids = list(net.spec.class_ids)
        self.chains = net.route_subservers
        self.class_routes = [list(net.class_routes[c]) for c in self.class_ids]
        self._cache: dict[tuple[int, ...], RegimeInfo] = {}

    def route_values(self, x: Sequence[int]) -> tuple[list[float], list[int]]:
        vals, pos = [], []
        a = self.params.alpha
        for chain in self.chains:
            v, p = f_route(x, chain, a)
            vals.append(v)
            pos.append(p)
        return vals, pos

    def value(self, x: Sequence[int]) -> float:
        return self.regime(x).value

    def regime(self, x: Sequence[int]) -> RegimeInfo:
        key = tuple(x)
        reg = self._cache.get(key)
        if reg is None:
            if len(self._cache) >= CACHE_LIMIT:
                self._cache.clear()
            reg = self._cache[key] = self._regime(key)
        return reg

    def _regime(self, x: Sequence[int]) -> RegimeInfo:
        p = self.params
        fvals, fpos = self.route_values(x)
        g, chosen = [], []
        for routes in self.class_routes:
            gv, _, idx = _best_prefix_count([fvals[r] for r in routes], p.beta)
            g.append(gv)
            chosen.append([routes[i] for i in idx])
        V, n_cls, cls_idx = _best_prefix_count(g, p.gamma)

        dom_routes, dom_subs, coeffs, bottlenecks = {}, {}, {}, []
        gamma_w = p.gamma ** (n_cls - 1)
        for ci in cls_idx:
            cid = self.class_ids[ci]
            rs = chosen[ci]
            beta_w = p.beta ** (len(rs) - 1)
            subs = []
            for r in rs:
                L = fpos[r]
                w = gamma_w * beta_w * p.alpha ** (L - 1)
                prefix = self.chains[r][:L]
                for k in prefix:
                    coeffs[k] = w
                subs.extend(prefix)
                bottlenecks.append(prefix[-1])
            dom_routes[cid] = tuple(rs)
            dom_subs[cid] = tuple(subs)
        return RegimeInfo(tuple(self.class_ids[ci] for ci in cls_idx), dom_routes, dom_subs,
                          tuple(sorted(bottlenecks)), coeffs, max(V, 0.0),
                          tuple(fvals), tuple(fpos))


class SingleClassTestFunction:
    """Max over upstream-closed subserver sets, by DP over per-route prefix lengths."""

    def __init__(self, net: ExpandedNetwork, params: SingleClassParams):
        self.net = net
        self.params = params
        self.chains = net.route_subservers
        self.size = net.size
        self._coef = [0.0] + [params.coef(m) for m in range(1, self.size + 1)]
        self._cache: dict[tuple[int, ...], RegimeInfo] = {}

    def value(self, x: Sequence[int]) -> float:
        return self.regime(x).value

    def regime(self, x: Sequence[int]) -> RegimeInfo:
        key = tuple(x)
        reg = self._cache.get(key)
        if reg is None:
            if len(self._cache) >= CACHE_LIMIT:
                self._cache.clear()
            reg = self._cache[key] = self._regime(key)
        return reg

    def _best_by_size(self, x: Sequence[int]) -> list[tuple[int, tuple[int, ...]]]:
        """For every set size m, the largest job sum over upstream-closed sets of size m.

        Ties go to the lexicographically largest vector of per-route prefix
        lengths.  Routes are processed last to first; at equal sums the longer
        prefix of the earlier route wins, which yields exactly that order.
        """
        size = self.size
        best = [0] + [-1] * size  # best suffix sum per size, -1 = unreachable
        back: list[list[int]] = []
        for chain in reversed(self.chains):
            acc = [0]
            for k in chain:
                acc.append(acc[-1] + x[k])
            new = [-1] * (size + 1)
            pick = [0] * (size + 1)
            for m, s0 in enumerate(best):
                if s0 < 0:
                    continue
                for l, ps in enumerate(acc):
                    v = s0 + ps
                    if v > new[m + l] or (v == new[m + l] and l > pick[m + l]):
                        new[m + l] = v
                        pick[m + l] = l
            best = new
            back.append(pick)
        back.reverse()
        out = []
        for m in range(size + 1):
            lens, rest = [], m
            for pick in back:
                l = pick[rest]
                lens.append(l)
                rest -= l
            out.append((best[m], tuple(lens)))
        return out

    def _regime(self, x: Sequence[int]) -> RegimeInfo:
        best = self._best_by_size(x)
        V, best_m = -1.0, 0
        for m in range(1, self.size + 1):
            val = self._coef[m] * best[m][0]
            if _cmp(val, V) >= 0:
                V, best_m = max(val, V), m
        lens = best[best_m][1]
        w = self._coef[best_m]
        coeffs, bottlenecks, routes = {}, [], []
        for r, (chain, l) in enumerate(zip(self.chains, lens)):
            if l:
                routes.append(r)
                for k in chain[:l]:
                    coeffs[k] = w
                bottlenecks.append(chain[l - 1])
        by_class: dict[str, list[int]] = {}
        subs_by_class: dict[str, list[int]] = {}
        for r in routes:
            cls = self.net.routes[r].cls
            by_class.setdefault(cls, []).append(r)
            subs_by_class.setdefault(cls, []).extend(self.chains[r][:lens[r]])
        classes = tuple(c for c in self.net.spec.class_ids if c in by_class)
        return RegimeInfo(classes, {c: tuple(v) for c, v in by_class.items()},
                          {c: tuple(v) for c, v in subs_by_class.items()},
                          tuple(sorted(bottlenecks)), coeffs, max(V, 0.0),
                          tuple(0.0 for _ in self.chains), tuple(lens))


def value_multiclass(net: ExpandedNetwork, x: ExpandedState | Sequence[int],
                     params: MultiClassParams) -> RegimeInfo:
    params.check(net)
    xs = x.x if isinstance(x, ExpandedState) else x
    return MultiClassTestFunction(net, params).regime(xs)


def value_singleclass(net: ExpandedNetwork, x: ExpandedState | Sequence[int],
                      params: SingleClassParams) -> RegimeInfo:
    xs = x.x if isinstance(x, ExpandedState) else x
    return SingleClassTestFunction(net, params).regime(xs)


def service_rates(net: ExpandedNetwork, state: ExpandedState, decision) -> list[float]:
    """Controlled service rate of every subserver, from the activation distribution."""
    rates = net.spec.rates
    mu = [0.0] * net.size
    for n, dist in decision.activation.items():
        total = sum(dist.values())
        if total > 1.0 + 1e-9:
            raise InconsistentRates(f"server {n}: activation mass {total} > 1")
        for k, p in dist.items():
            if net.subservers[k].server != n:
                raise InconsistentRates(f"subserver {k} is not a duplicate of server {n}")
            if state.x[k] > 0 and k not in state.held:
                mu[k] += rates[n] * p
    return mu


def mean_velocity(net: ExpandedNetwork, state: ExpandedState, decision) -> list[float]:
    """Expected net inflow rate of every subserver under ``decision``.

    Discharges are spread over the decision's discharge distribution, which for
    route-faithful policies is the route successor.
    """
    lam = {c.id: c.lam for c in net.spec.classes}
    v = [0.0] * net.size
    for cls, dist in decision.arrival_routing.items():
        for k, p in dist.items():
            v[k] += lam[cls] * p
    mu = service_rates(net, state, decision)
    for k, m in enumerate(mu):
        if m == 0.0 or k in decision.holds:
            continue
        v[k] -= m
        for j, q in decision.discharge_routing[k].items():
            if j is not None:
                v[j] += m * q
    return v


def mean_drift(state: ExpandedState | Sequence[int], regime: RegimeInfo,
               velocity: Sequence[float], epsilon: float = DEFAULT_EPSILON) -> DriftReport:
    xs = state.x if isinstance(state, ExpandedState) else state
    drift = sum(c * velocity[k] for k, c in regime.coefficients.items())
    return DriftReport(tuple(xs), regime, list(velocity), drift, epsilon)


def apply_moves(x: Sequence[int], moves: Iterable[tuple[int, int]]) -> list[int]:
    y = list(x)
    for k, d in moves:
        y[k] += d
    return y


def generator_drift(state: ExpandedState | Sequence[int], transitions,
                    value_fn: Callable[[Sequence[int]], float]) -> float:
    """Sum over transitions of rate * (V(next) - V(current))."""
    xs = state.x if isinstance(state, ExpandedState) else state
    v0 = value_fn(xs)
    total = 0.0
    for tr in transitions:
        for p, moves in tr.outcomes:
            if p and moves:
                total += tr.rate * p * (value_fn(apply_moves(xs, moves)) - v0)
    return total
