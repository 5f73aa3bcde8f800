"""Original (unexpanded) acyclic multi-class networks.

A network is a set of exponential servers wired into a DAG between origin and
destination terminals.  Job classes are origin-destination pairs with Poisson
arrival rates.  Everything downstream (expansion, policies, simulation) is
built from the route sets returned by :func:`enumerate_routes`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

DEFAULT_ROUTE_CAP = 10_000
MAX_MIN_CUT_SERVERS = 20


class NetworkError(ValueError):
    """Base class for invalid network descriptions."""


class CycleDetected(NetworkError):
    pass


class UnknownNode(NetworkError):
    pass


class DisconnectedClass(NetworkError):
    pass


class NonPositiveRate(NetworkError):
    pass


class InvalidEdge(NetworkError):
    pass


class DuplicateClass(NetworkError):
    pass


class RouteCapExceeded(NetworkError):
    pass


class MultiClassUnsupported(NetworkError):
    pass


class TooManyServers(NetworkError):
    pass


@dataclass(frozen=True)
class ServerSpec:
    id: str
    rate: float


@dataclass(frozen=True)
class ClassSpec:
    id: str
    origin: str
    destination: str
    lam: float


@dataclass(frozen=True)
class Route:
    cls: str
    servers: tuple[str, ...]

    @property
    def length(self) -> int:
        return len(self.servers)

    @property
    def label(self) -> str:
        return "(" + ",".join(self.servers) + ")"


@dataclass(frozen=True)
class NetworkSpec:
    servers: tuple[ServerSpec, ...]
    edges: tuple[tuple[str, str], ...]
    classes: tuple[ClassSpec, ...]
    origins: frozenset[str] = field(default_factory=frozenset)
    destinations: frozenset[str] = field(default_factory=frozenset)
    name: str = ""
    notes: str = ""

    @property
    def server_ids(self) -> list[str]:
        return [s.id for s in self.servers]

    @property
    def rates(self) -> dict[str, float]:
        return {s.id: s.rate for s in self.servers}

    @property
    def class_ids(self) -> list[str]:
        return [c.id for c in self.classes]

    def get_class(self, cid: str) -> ClassSpec:
        for c in self.classes:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def successors(self, node: str) -> list[str]:
        return [v for u, v in self.edges if u == node]

    def with_arrivals(self, lams: Mapping[str, float] | Iterable[float]) -> "NetworkSpec":
        """Copy of the network with new arrival rates (by class id or in class order)."""
        if isinstance(lams, Mapping):
            new = tuple(ClassSpec(c.id, c.origin, c.destination, float(lams.get(c.id, c.lam)))
                        for c in self.classes)
        else:
            vals = list(lams)
            if len(vals) != len(self.classes):
                raise ValueError("one arrival rate per class expected")
            new = tuple(ClassSpec(c.id, c.origin, c.destination, float(v))
                        for c, v in zip(self.classes, vals))
        return NetworkSpec(self.servers, self.edges, new, self.origins, self.destinations,
                           self.name, self.notes)

    def with_rates(self, rates: Mapping[str, float]) -> "NetworkSpec":
        new = tuple(ServerSpec(s.id, float(rates.get(s.id, s.rate))) for s in self.servers)
        return NetworkSpec(new, self.edges, self.classes, self.origins, self.destinations,
                           self.name, self.notes)

    def scaled(self, factor: float) -> "NetworkSpec":
        """All service and arrival rates multiplied by ``factor``."""
        return self.with_rates({s.id: s.rate * factor for s in self.servers}).with_arrivals(
            [c.lam * factor for c in self.classes])

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.name:
            out["name"] = self.name
        if self.notes:
            out["notes"] = self.notes
        out["servers"] = [{"id": s.id, "rate": s.rate} for s in self.servers]
        out["edges"] = [[u, v] for u, v in self.edges]
        out["classes"] = [{"id": c.id, "origin": c.origin, "destination": c.destination,
                           "lambda": c.lam} for c in self.classes]
        inferred_o = {c.origin for c in self.classes}
        inferred_d = {c.destination for c in self.classes}
        if set(self.origins) != inferred_o:
            out["origins"] = sorted(self.origins)
        if set(self.destinations) != inferred_d:
            out["destinations"] = sorted(self.destinations)
        return out


def natural_key(node_id: str) -> tuple:
    """Sort key that orders "2" before "10" and falls back to plain text."""
    parts = re.split(r"(\d+)", node_id)
    return tuple((0, int(p)) if p.isdigit() else (1, p) for p in parts if p != "")


def route_key(servers: Iterable[str]) -> tuple:
    return tuple(natural_key(s) for s in servers)


def from_dict(data: Mapping[str, Any]) -> NetworkSpec:
    """Parse the JSON network layout and validate it."""
    try:
        servers = tuple(ServerSpec(str(s["id"]), float(s["rate"])) for s in data["servers"])
        edges = tuple((str(u), str(v)) for u, v in data["edges"])
        classes = tuple(
            ClassSpec(str(c["id"]), str(c["origin"]), str(c["destination"]),
                      float(c.get("lambda", c.get("lam", 0.0))))
            for c in data["classes"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed network description: {exc!r}") from exc
    origins = frozenset(str(o) for o in data.get("origins", [c.origin for c in classes]))
    destinations = frozenset(str(d) for d in data.get("destinations",
                                                         [c.destination for c in classes]))
    spec = NetworkSpec(servers, edges, classes, origins, destinations,
                       str(data.get("name", "")), str(data.get("notes", "")))
    return validate(spec)


def load_network(path: str | Path) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))


def validate(spec: NetworkSpec) -> NetworkSpec:
    server_ids = [s.id for s in spec.servers]
    servers = set(server_ids)
    if len(servers) != len(server_ids):
        raise NetworkError("duplicate server id")
    for s in spec.servers:
        if not s.rate > 0:
            raise NonPositiveRate(f"server {s.id} has service rate {s.rate}")
    if spec.origins & spec.destinations or (spec.origins | spec.destinations) & servers:
        raise NetworkError("origins, destinations and servers must be disjoint")

    for c in spec.classes:
        if not c.lam >= 0:
            raise NonPositiveRate(f"class {c.id} has arrival rate {c.lam}")
        if c.origin not in spec.origins:
            raise UnknownNode(f"class {c.id}: unknown origin {c.origin}")
        if c.destination not in spec.destinations:
            raise UnknownNode(f"class {c.id}: unknown destination {c.destination}")
    if len({c.id for c in spec.classes}) != len(spec.classes):
        raise DuplicateClass("duplicate class id")
    if len({(c.origin, c.destination) for c in spec.classes}) != len(spec.classes):
        raise DuplicateClass("two classes share an origin-destination pair")

    nodes = servers | spec.origins | spec.destinations
    for u, v in spec.edges:
        for node in (u, v):
            if node not in nodes:
                raise UnknownNode(f"edge ({u}, {v}) references unknown node {node}")
        if u in spec.destinations or v in spec.origins:
            raise InvalidEdge(f"edge ({u}, {v}) leaves a destination or enters an origin")
        if u in spec.origins and v in spec.destinations:
            raise InvalidEdge(f"edge ({u}, {v}) bypasses every server")
        if u == v:
            raise CycleDetected(f"self-loop at {u}")

    graph: dict[str, set[str]] = {n: set() for n in nodes}
    for u, v in spec.edges:
        graph[v].add(u)
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise CycleDetected(f"cycle through {exc.args[1]}") from exc

    for c in spec.classes:
        if not _reachable(spec, c.origin, c.destination):
            raise DisconnectedClass(f"class {c.id}: {c.destination} unreachable from {c.origin}")
    return spec


def _reachable(spec: NetworkSpec, src: str, dst: str) -> bool:
    adj: dict[str, list[str]] = {}
    for u, v in spec.edges:
        adj.setdefault(u, []).append(v)
    seen, stack = {src}, [src]
    while stack:
        u = stack.pop()
        if u == dst:
            return True
        for v in adj.get(u, ()):
            if v not in seen and (v == dst or v not in spec.destinations):
                seen.add(v)
                stack.append(v)
    return False


def enumerate_routes(spec: NetworkSpec, cls: str, cap: int = DEFAULT_ROUTE_CAP) -> list[Route]:
    """All server paths from the class origin to its destination, in canonical order."""
    c = spec.get_class(cls)
    servers = {s.id for s in spec.servers}
    adj: dict[str, list[str]] = {}
    for u, v in spec.edges:
        adj.setdefault(u, []).append(v)

    found: list[tuple[str, ...]] = []
    # iterative DFS; the graph is acyclic so paths are automatically simple
    stack: list[tuple[str, tuple[str, ...]]] = [(c.origin, ())]
    while stack:
        node, path = stack.pop()
        for v in adj.get(node, ()):
            if v == c.destination:
                if path:
                    found.append(path)
                    if len(found) > cap:
                        raise RouteCapExceeded(f"class {cls} has more than {cap} routes")
            elif v in servers:
                stack.append((v, path + (v,)))
    found = sorted(set(found), key=route_key)
    return [Route(cls, p) for p in found]


def all_routes(spec: NetworkSpec, cap: int = DEFAULT_ROUTE_CAP) -> dict[str, list[Route]]:
    return {c.id: enumerate_routes(spec, c.id, cap) for c in spec.classes}


def min_cut(spec: NetworkSpec) -> float:
    """Minimum total service rate over server sets that meet every route.

    Exhaustive over subsets, so only intended for small networks.
    """
    if len(spec.classes) != 1:
        raise MultiClassUnsupported("min_cut is defined for single-class networks")
    n = len(spec.servers)
    if n > MAX_MIN_CUT_SERVERS:
        raise TooManyServers(f"{n} servers > {MAX_MIN_CUT_SERVERS}")
    index = {s.id: i for i, s in enumerate(spec.servers)}
    route_masks = [sum(1 << index[s] for s in r.servers)
                   for r in enumerate_routes(spec, spec.classes[0].id)]
    masks = np.arange(1 << n, dtype=np.int64)
    covers = np.ones(masks.shape, dtype=bool)
    for rm in route_masks:
        covers &= (masks & rm) != 0
    weights = np.zeros(masks.shape)
    for i, s in enumerate(spec.servers):
        weights += ((masks >> i) & 1) * s.rate
    return float(weights[covers].min())
