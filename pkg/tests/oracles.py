"""Independent reference implementations used only by the tests.

Each oracle recomputes a quantity by brute force from the definitions, without
sharing code paths with the package (beyond reading the network structure).
"""

from __future__ import annotations

import itertools
import random

import numpy as np
from scipy.optimize import linprog

from qnet_mdi.network import NetworkSpec, all_routes, from_dict


def _nonempty_subsets(items):
    items = list(items)
    for r in range(1, len(items) + 1):
        yield from itertools.combinations(items, r)


def brute_multiclass(net, x, alpha, beta, gamma) -> float:
    """Nested max over class subsets, route subsets and route prefixes."""
    def f(chain):
        return max(alpha ** i * sum(x[k] for k in chain[:i + 1]) for i in range(len(chain)))

    g = {}
    for cls in net.spec.class_ids:
        routes = net.class_routes[cls]
        g[cls] = max(beta ** (len(sub) - 1) * sum(f(net.route_subservers[r]) for r in sub)
                     for sub in _nonempty_subsets(routes))
    return max(gamma ** (len(sub) - 1) * sum(g[c] for c in sub)
               for sub in _nonempty_subsets(g))


def brute_singleclass(net, x, delta) -> float:
    """Max over every nonempty upstream-closed subserver set K of coef(|K|) * x(K)."""
    best = 0.0
    ks = range(net.size)
    for sub in _nonempty_subsets(ks):
        s = set(sub)
        if any(net.subservers[k].pred is not None and net.subservers[k].pred not in s
               for k in sub):
            continue
        m = len(sub)
        best = max(best, (1 + (m - 1) * delta) / m * sum(x[k] for k in sub))
    return best


def lp_slack_scipy(spec: NetworkSpec) -> float | None:
    """Max slack of the route-flow program via scipy's HiGHS; None if infeasible."""
    routes = [r for rs in all_routes(spec).values() for r in rs]
    nr = len(routes)
    c = np.zeros(nr + 1)
    c[nr] = -1.0
    A_eq = [[1.0 if r.cls == cl.id else 0.0 for r in routes] + [0.0] for cl in spec.classes]
    b_eq = [cl.lam for cl in spec.classes]
    A_ub = [[1.0 if s.id in r.servers else 0.0 for r in routes] + [1.0] for s in spec.servers]
    b_ub = [s.rate for s in spec.servers]
    bounds = [(0, None)] * nr + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    return None if res.status == 2 else float(-res.fun)


def grid_slack(spec: NetworkSpec, steps: int = 64) -> float:
    """Best slack over route splits whose per-route fractions are multiples of 1/steps."""
    by_class = all_routes(spec)
    per_class = []
    for cl in spec.classes:
        routes = by_class[cl.id]
        splits = []
        for comp in _compositions(len(routes), steps):
            splits.append({r: cl.lam * n / steps for r, n in zip(routes, comp)})
        per_class.append(splits)
    best = -np.inf
    for combo in itertools.product(*per_class):
        loads = {s.id: 0.0 for s in spec.servers}
        for split in combo:
            for r, f in split.items():
                for n in r.servers:
                    loads[n] += f
        best = max(best, min(s.rate - loads[s.id] for s in spec.servers))
    return float(best)


def _compositions(n, total):
    if n == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(n - 1, total - first):
            yield (first,) + rest


def random_dag(rng: random.Random, n_servers: int, n_classes: int = 1,
               edge_p: float = 0.35, lam: float | None = None) -> dict:
    """Random acyclic network description with every class connected."""
    ids = [str(i + 1) for i in range(n_servers)]
    edges = set()
    origins = [f"S{c + 1}" for c in range(n_classes)]
    dests = [f"T{c + 1}" for c in range(n_classes)]
    for i in range(n_servers):
        for j in range(i + 1, n_servers):
            if rng.random() < edge_p:
                edges.add((ids[i], ids[j]))
    for o in origins:
        for i in ids:
            if rng.random() < edge_p:
                edges.add((o, i))
    for t in dests:
        for i in ids:
            if rng.random() < edge_p:
                edges.add((i, t))
    for o, t in zip(origins, dests):
        # guarantee one path: origin -> a -> ... -> b -> destination
        a, b = sorted(rng.sample(range(n_servers), 2)) if n_servers > 1 else (0, 0)
        edges.add((o, ids[a]))
        edges.add((ids[b], t))
        for u in range(a, b):
            edges.add((ids[u], ids[u + 1]))
    rates = [rng.choice([0.25, 0.5, 0.75, 1.0, 1.5, 2.0]) for _ in ids]
    classes = [{"id": f"c{c + 1}", "origin": origins[c], "destination": dests[c],
                "lambda": lam if lam is not None else round(rng.uniform(0.1, 2.5), 3)}
               for c in range(n_classes)]
    return {"servers": [{"id": i, "rate": r} for i, r in zip(ids, rates)],
            "edges": sorted(edges), "classes": classes}


def random_spec(rng: random.Random, **kw) -> NetworkSpec:
    return from_dict(random_dag(rng, **kw))
