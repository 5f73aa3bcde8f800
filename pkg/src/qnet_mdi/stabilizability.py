"""Stabilizability of an acyclic network via a max-slack route-flow program.

The network is stabilizable exactly when some nonnegative split of every
class's arrival rate over its routes keeps every server strictly below its
service rate.  The strict inequality is encoded as a positive optimal slack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkSpec, Route, all_routes
from .simplex import NumericalFailure, solve_lp

SLACK_TOL = 1e-9


class ZeroSlack(ValueError):
    """A Bernoulli split was requested from a certificate without positive slack."""


@dataclass(frozen=True)
class FlowCertificate:
    xi: dict[Route, float]
    slack: float
    loads: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "slack": self.slack,
            "xi": [{"class": r.cls, "route": list(r.servers), "flow": f}
                   for r, f in self.xi.items()],
            "loads": self.loads,
        }


@dataclass(frozen=True)
class StabilizabilityResult:
    stabilizable: bool
    certificate: FlowCertificate | None
    slack: float | None

    def to_dict(self) -> dict:
        out = {"stabilizable": self.stabilizable, "slack": self.slack, "xi": None}
        if self.certificate is not None:
            out["xi"] = self.certificate.to_dict()["xi"]
        return out


def certificate_from_flows(spec: NetworkSpec, xi: dict[Route, float]) -> FlowCertificate:
    loads = {s.id: 0.0 for s in spec.servers}
    for r, f in xi.items():
        for n in r.servers:
            loads[n] += f
    slack = min(s.rate - loads[s.id] for s in spec.servers)
    return FlowCertificate(dict(xi), float(slack), loads)


def check_certificate(spec: NetworkSpec, cert: FlowCertificate, tol: float = 1e-9) -> list[str]:
    """Independent re-check of a certificate; returns the list of broken constraints."""
    problems = []
    for r, f in cert.xi.items():
        if f < -tol:
            problems.append(f"negative flow {f} on {r.cls}:{r.label}")
    for c in spec.classes:
        total = sum(f for r, f in cert.xi.items() if r.cls == c.id)
        if abs(total - c.lam) > tol * max(1.0, c.lam):
            problems.append(f"class {c.id} carries {total}, expected {c.lam}")
    loads = {s.id: 0.0 for s in spec.servers}
    for r, f in cert.xi.items():
        for n in r.servers:
            loads[n] += f
    slack = min(s.rate - loads[s.id] for s in spec.servers)
    if abs(slack - cert.slack) > tol:
        problems.append(f"reported slack {cert.slack} differs from recomputed {slack}")
    return problems


def check_stabilizable(spec: NetworkSpec) -> StabilizabilityResult:
    routes = [r for rs in all_routes(spec).values() for r in rs]
    servers = spec.server_ids
    nr = len(routes)
    # variables: xi_r (nr), s_plus, s_minus
    c = np.zeros(nr + 2)
    c[nr], c[nr + 1] = 1.0, -1.0
    A_eq = np.zeros((len(spec.classes), nr + 2))
    b_eq = np.zeros(len(spec.classes))
    for i, cl in enumerate(spec.classes):
        for j, r in enumerate(routes):
            if r.cls == cl.id:
                A_eq[i, j] = 1.0
        b_eq[i] = cl.lam
    A_ub = np.zeros((len(servers), nr + 2))
    b_ub = np.zeros(len(servers))
    for i, s in enumerate(spec.servers):
        for j, r in enumerate(routes):
            if s.id in r.servers:
                A_ub[i, j] = 1.0
        A_ub[i, nr], A_ub[i, nr + 1] = 1.0, -1.0
        b_ub[i] = s.rate
    # s_minus is bounded by the largest possible overload, keeps phase 2 bounded
    bound = np.zeros(nr + 2)
    bound[nr + 1] = 1.0
    A_ub = np.vstack([A_ub, bound])
    b_ub = np.append(b_ub, sum(cl.lam for cl in spec.classes) + 1.0)

    res = solve_lp(c, A_ub, b_ub, A_eq, b_eq)
    if res.status == "infeasible":
        return StabilizabilityResult(False, None, None)
    if res.status != "optimal":
        raise NumericalFailure(f"unexpected LP status {res.status}")
    xi = {r: max(0.0, float(res.x[j])) for j, r in enumerate(routes)}
    cert = certificate_from_flows(spec, xi)
    return StabilizabilityResult(cert.slack > SLACK_TOL, cert, cert.slack)


def bernoulli_policy(cert: FlowCertificate) -> dict[str, dict[Route, float]]:
    """Per-class route probabilities proportional to the certificate flows."""
    if not cert.slack > SLACK_TOL:
        raise ZeroSlack(f"certificate slack {cert.slack} is not positive")
    by_class: dict[str, list[Route]] = {}
    for r in cert.xi:
        by_class.setdefault(r.cls, []).append(r)
    out = {}
    for cls, routes in by_class.items():
        total = sum(cert.xi[r] for r in routes)
        if total <= 0.0:
            out[cls] = {r: 1.0 / len(routes) for r in routes}
        else:
            out[cls] = {r: cert.xi[r] / total for r in routes}
    return out
