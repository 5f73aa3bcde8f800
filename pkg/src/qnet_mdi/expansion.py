"""Route expansion: every route becomes its own chain of subservers.

A server visited by several routes is split into duplicate subservers that
share the physical service rate; at most one duplicate is served at a time.
Subservers are addressed by integer index ``k`` internally and by a readable
name ("3a", "3b", or the bare server id when not duplicated) at the edges.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Mapping

from .network import NetworkSpec, Route, all_routes


@dataclass(frozen=True)
class Subserver:
    k: int
    name: str
    cls: str
    route: int  # index into ExpandedNetwork.routes
    position: int  # 1-based
    server: str
    pred: int | None
    succ: int | None


@dataclass(frozen=True)
class ExpandedNetwork:
    spec: NetworkSpec
    routes: tuple[Route, ...]
    route_subservers: tuple[tuple[int, ...], ...]
    subservers: tuple[Subserver, ...]
    duplicate_groups: dict[str, tuple[int, ...]]
    class_routes: dict[str, tuple[int, ...]]

    @property
    def size(self) -> int:
        return len(self.subservers)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.subservers]

    def index(self, name: str) -> int:
        for s in self.subservers:
            if s.name == name:
                return s.k
        raise KeyError(name)

    def first_subservers(self, cls: str) -> list[int]:
        return [self.route_subservers[r][0] for r in self.class_routes[cls]]

    def state(self, counts: Mapping[str, int] | None = None) -> "ExpandedState":
        """Build a state from subserver-name counts (missing names are zero)."""
        x = [0] * self.size
        for name, v in (counts or {}).items():
            x[self.index(name)] = int(v)
        return ExpandedState(x)

    def to_dict(self) -> dict:
        def ref(j, end):
            return end if j is None else self.subservers[j].name

        subs = []
        for s in self.subservers:
            cls = self.spec.get_class(s.cls)
            subs.append({
                "k": s.name,
                "class": s.cls,
                "route": list(self.routes[s.route].servers),
                "position": s.position,
                "server": s.server,
                "pred": ref(s.pred, cls.origin),
                "succ": ref(s.succ, cls.destination),
            })
        return {
            "subservers": subs,
            "duplicate_groups": {n: [self.subservers[k].name for k in ks]
                                 for n, ks in self.duplicate_groups.items()},
        }


@dataclass
class ExpandedState:
    x: list[int]
    held: set[int] = field(default_factory=set)
    active: dict[str, int | None] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.x)

    def copy(self) -> "ExpandedState":
        return ExpandedState(list(self.x), set(self.held), dict(self.active))

    def named(self, net: ExpandedNetwork) -> dict[str, int]:
        return {s.name: self.x[s.k] for s in net.subservers}


def _suffix(i: int) -> str:
    letters = string.ascii_lowercase
    out = ""
    i += 1
    while i:
        i, rem = divmod(i - 1, 26)
        out = letters[rem] + out
    return out


def expand(spec: NetworkSpec) -> ExpandedNetwork:
    routes: list[Route] = []
    class_routes: dict[str, tuple[int, ...]] = {}
    for cls, rs in all_routes(spec).items():
        class_routes[cls] = tuple(range(len(routes), len(routes) + len(rs)))
        routes.extend(rs)

    visits: dict[str, int] = {}
    for r in routes:
        for n in r.servers:
            visits[n] = visits.get(n, 0) + 1

    raw = []
    route_subservers = []
    seen: dict[str, int] = {}
    for ri, r in enumerate(routes):
        chain = []
        for pos, n in enumerate(r.servers, start=1):
            k = len(raw)
            if visits[n] > 1:
                name = n + _suffix(seen.get(n, 0))
                seen[n] = seen.get(n, 0) + 1
            else:
                name = n
            raw.append((k, name, r.cls, ri, pos, n))
            chain.append(k)
        route_subservers.append(tuple(chain))

    subservers = []
    for chain in route_subservers:
        for i, k in enumerate(chain):
            _, name, cls, ri, pos, n = raw[k]
            pred = chain[i - 1] if i > 0 else None
            succ = chain[i + 1] if i + 1 < len(chain) else None
            subservers.append(Subserver(k, name, cls, ri, pos, n, pred, succ))
    subservers.sort(key=lambda s: s.k)

    groups: dict[str, tuple[int, ...]] = {}
    for s in spec.servers:
        ks = tuple(sub.k for sub in subservers if sub.server == s.id)
        if ks:
            groups[s.id] = ks
    return ExpandedNetwork(spec, tuple(routes), tuple(route_subservers), tuple(subservers),
                           groups, class_routes)


def project_state(net: ExpandedNetwork, state: ExpandedState) -> dict[str, dict[str, int]]:
    """Class-specific job numbers per physical server."""
    out = {s.id: {c.id: 0 for c in net.spec.classes} for s in net.spec.servers}
    for sub in net.subservers:
        out[sub.server][sub.cls] += state.x[sub.k]
    return out


def server_totals(net: ExpandedNetwork, x: list[int]) -> dict[str, int]:
    out = {s.id: 0 for s in net.spec.servers}
    for sub in net.subservers:
        out[sub.server] += x[sub.k]
    return out


def _spread(total: int, ks: list[int], mode: str, x: list[int]) -> None:
    if not ks:
        if total:
            raise ValueError("jobs assigned to a server with no matching subserver")
        return
    if mode == "all-to-first":
        x[ks[0]] += total
    elif mode == "balanced":
        q, r = divmod(total, len(ks))
        for i, k in enumerate(ks):
            x[k] += q + (1 if i < r else 0)
    else:
        raise ValueError(f"unknown split mode {mode!r}")


def initial_split(net: ExpandedNetwork, xbar: Mapping[str, int | Mapping[str, int]],
                  mode: str = "balanced") -> ExpandedState:
    """Distribute original per-server counts over duplicates.

    ``xbar[n]`` is either a total (spread over all of ``K_n``) or a
    class -> count mapping (spread over the duplicates of that class).
    """
    x = [0] * net.size
    for n, val in xbar.items():
        group = list(net.duplicate_groups.get(n, ()))
        if isinstance(val, Mapping):
            for cls, cnt in val.items():
                if cnt < 0:
                    raise ValueError("negative job count")
                _spread(int(cnt), [k for k in group if net.subservers[k].cls == cls], mode, x)
        else:
            if val < 0:
                raise ValueError("negative job count")
            _spread(int(val), group, mode, x)
    return ExpandedState(x)
