"""Command-line entry point: ``qnet-mdi <subcommand> ...`` or ``python -m qnet_mdi``.

Every subcommand that writes into ``--out`` also writes ``manifest.json`` with
a hash of the effective configuration, the seed, package versions and the
random-number algorithm, which is enough to reproduce the run exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy

from . import __version__
from .driftscan import ScanConfig, scan
from .expansion import expand
from .fixtures import FIXTURE_NAMES, fixture_dict, ship_fixtures
from .network import NetworkError, NetworkSpec, from_dict
from .policies import make_policy
from .simulator import RNG_ALGORITHM, SimConfig, classify, simulate_many
from .stabilizability import check_stabilizable
from .testfn import MultiClassParams, SingleClassParams, value_multiclass, value_singleclass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def network_data(ref: str | Mapping[str, Any]) -> dict:
    """A network given inline, as a JSON path, or as a bundled fixture name."""
    if isinstance(ref, Mapping):
        return dict(ref)
    path = Path(ref)
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return data["network"] if "network" in data and "servers" not in data else data
    if ref in FIXTURE_NAMES:
        return fixture_dict(ref)
    raise ConfigError(f"no network file or fixture named {ref!r}")


def apply_overrides(data: dict, lambdas: Sequence[float] | None = None,
                    rates: Mapping[str, float] | None = None) -> dict:
    data = json.loads(json.dumps(data))
    if lambdas is not None:
        if len(lambdas) != len(data["classes"]):
            raise ConfigError(f"{len(lambdas)} arrival rates given for "
                              f"{len(data['classes'])} classes")
        for c, lam in zip(data["classes"], lambdas):
            c["lambda"] = float(lam)
    for s in data["servers"]:
        if rates and str(s["id"]) in rates:
            s["rate"] = float(rates[str(s["id"])])
    return data


@dataclass
class ExperimentConfig:
    network: dict
    policies: list[dict] = field(default_factory=lambda: [{"policy": "jsr"}])
    sim: dict = field(default_factory=dict)
    scan: dict | None = None
    commands: list[str] = field(default_factory=lambda: ["check-stabilizability", "simulate"])
    out: str = "results"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        if "network" not in data:
            raise ConfigError("experiment config needs a 'network' entry")
        net = network_data(data["network"])
        pol = data.get("policies", data.get("policy", [{"policy": "jsr"}]))
        if isinstance(pol, Mapping):
            pol = [pol]
        elif isinstance(pol, str):
            pol = [{"policy": pol}]
        cfg = cls(net, [dict(p) if isinstance(p, Mapping) else {"policy": p} for p in pol],
                  dict(data.get("sim", {})), data.get("scan"),
                  list(data.get("commands", ["check-stabilizability", "simulate"])),
                  str(data.get("out", "results")))
        cfg.spec()
        return cfg

    def spec(self) -> NetworkSpec:
        try:
            return from_dict(self.network)
        except NetworkError as exc:
            raise ConfigError(str(exc)) from exc

    def sim_config(self) -> SimConfig:
        return SimConfig(**self.sim) if self.sim else SimConfig(horizon=1000.0)

    def scan_config(self) -> ScanConfig:
        return ScanConfig(**(self.scan or {}))


def config_hash(payload: Any) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(out: Path, payload: dict, seed: int | None, argv: Sequence[str] | None
                   ) -> Path:
    manifest = {
        "config_hash": config_hash(payload),
        "config": payload,
        "seed": seed,
        "argv": list(argv) if argv is not None else None,
        "rng": RNG_ALGORITHM,
        "versions": {
            "qnet_mdi": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, default=_round_floats)


def _round_floats(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


# ---------------------------------------------------------------------------
# operations shared by the subcommands and run_experiment


def run_simulation(spec: NetworkSpec, policy_cfg: Mapping[str, Any], sim: SimConfig,
                   out: Path | None = None) -> dict:
    policy = make_policy(spec, policy_cfg)
    traces = simulate_many(policy, sim)
    verdict = classify(traces)
    summary = {
        "network": spec.name,
        "policy": dict(policy_cfg),
        "verdict": verdict.to_dict(),
        "replications": [t.summary() for t in traces],
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        name = policy.name
        for tr in traces:
            tr.write_csv(out / f"{name}_rep{tr.replication:03d}.csv")
        (out / f"{name}_summary.json").write_text(_dump(summary) + "\n", encoding="utf-8")
    return summary


def compare_policies(spec: NetworkSpec, policy_cfgs: Sequence[Mapping[str, Any]],
                     sim: SimConfig, out: Path | None = None) -> dict:
    """Same seeds (hence same arrival streams) for every policy."""
    rows = []
    for pc in policy_cfgs:
        summary = run_simulation(spec, pc, sim, out)
        v = summary["verdict"]
        rows.append({"policy": pc["policy"], "verdict": v["verdict"], "slope": v["slope"],
                     "slope_ci": v["slope_ci"], "mean_total": v["mean_total"],
                     "server_slopes": v["server_slopes"],
                     "violations": _sum_counts(r["violation_counts"]
                                               for r in summary["replications"])})
    table = {"network": spec.name, "seed": sim.seed, "horizon": sim.horizon,
             "replications": sim.replications, "rows": rows}
    if out is not None:
        (out / "comparison.json").write_text(_dump(table) + "\n", encoding="utf-8")
    return table


def _sum_counts(dicts) -> dict[str, int]:
    total: dict[str, int] = {}
    for d in dicts:
        for k, v in d.items():
            total[k] = total.get(k, 0) + v
    return total


def format_table(table: dict) -> str:
    lines = [f"{'policy':<10} {'verdict':<13} {'slope':>10} {'ci':>9} {'mean_total':>11}"]
    for r in table["rows"]:
        lines.append(f"{r['policy']:<10} {r['verdict']:<13} {r['slope']:>10.5f} "
                     f"{r['slope_ci']:>9.5f} {r['mean_total']:>11.3f}")
    return "\n".join(lines)


def run_scan(spec: NetworkSpec, policy_cfg: Mapping[str, Any], cfg: ScanConfig) -> dict:
    policy = make_policy(spec, policy_cfg)
    if not hasattr(policy, "net"):
        raise ConfigError("the drift scan needs an expanded-network policy (jsr or jsqas)")
    return scan(policy, cfg).to_dict()


def run_experiment(cfg: ExperimentConfig, argv: Sequence[str] | None = None) -> int:
    """Run every requested command and write artifacts under ``cfg.out``."""
    spec = cfg.spec()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.sim_config()
    results: dict[str, Any] = {}
    for cmd in cfg.commands:
        if cmd == "check-stabilizability":
            results[cmd] = check_stabilizable(spec).to_dict()
        elif cmd == "expand":
            results[cmd] = expand(spec).to_dict()
        elif cmd == "simulate":
            results[cmd] = [run_simulation(spec, pc, sim, out)["verdict"] for pc in cfg.policies]
        elif cmd == "compare-policies":
            results[cmd] = compare_policies(spec, cfg.policies, sim, out)
        elif cmd == "drift-scan":
            # baselines without a test function (jsq, bernoulli) have nothing to scan
            results[cmd] = [{"policy": pc["policy"], **run_scan(spec, pc, cfg.scan_config())}
                            for pc in cfg.policies
                            if str(pc["policy"]).lower().replace("-", "") in ("jsr", "jsqas")]
        else:
            raise ConfigError(f"unknown command {cmd!r}")
    (out / "results.json").write_text(_dump(results) + "\n", encoding="utf-8")
    write_manifest(out, asdict(cfg), sim.seed, argv)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_network(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True,
                   help="network JSON file or bundled fixture name (%s)" % ", ".join(FIXTURE_NAMES))
    p.add_argument("--lambda", dest="lambdas", type=_floats, default=None,
                   help="comma-separated arrival rates overriding the file, in class order")


def _add_policy(p: argparse.ArgumentParser, default: str | None = None) -> None:
    p.add_argument("--policy", default=default, required=default is None,
                   choices=["jsr", "jsqas", "jsq", "bernoulli"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)


def _add_sim(p: argparse.ArgumentParser) -> None:
    p.add_argument("--horizon", type=float, default=1000.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--sample-interval", type=float, default=1.0)
    p.add_argument("--warmup-fraction", type=float, default=0.2)
    p.add_argument("--no-checks", action="store_true", help="skip invariant monitoring")
    p.add_argument("--out", default=None)


def _policy_cfg(args, name: str | None = None) -> dict:
    cfg: dict[str, Any] = {"policy": name or args.policy}
    for key in ("alpha", "beta", "gamma", "delta"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def _sim_cfg(args) -> SimConfig:
    return SimConfig(horizon=args.horizon, seed=args.seed, replications=args.replications,
                     sample_interval=args.sample_interval,
                     warmup_fraction=args.warmup_fraction, check_invariants=not args.no_checks)


def _spec(args) -> tuple[NetworkSpec, dict]:
    data = apply_overrides(network_data(args.config), args.lambdas)
    try:
        return from_dict(data), data
    except NetworkError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_state(text: str, names: list[str]) -> list[int]:
    path = Path(text)
    raw = json.loads(path.read_text(encoding="utf-8") if path.exists() else text)
    if isinstance(raw, list):
        if len(raw) != len(names):
            raise ConfigError(f"state has {len(raw)} entries, expected {len(names)}")
        return [int(v) for v in raw]
    unknown = set(raw) - set(names)
    if unknown:
        raise ConfigError(f"unknown subservers in state: {sorted(unknown)}")
    return [int(raw.get(n, 0)) for n in names]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnet-mdi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixtures", help="write the bundled example networks")
    p.add_argument("--out", default=".")

    p = sub.add_parser("check-stabilizability", help="route-flow feasibility verdict")
    _add_network(p)

    p = sub.add_parser("expand", help="dump the route expansion")
    _add_network(p)

    p = sub.add_parser("eval-testfn", help="evaluate the test function at a state")
    _add_network(p)
    p.add_argument("--state", required=True,
                   help="JSON list or {subserver: count} object, or a file holding it")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)

    p = sub.add_parser("simulate", help="simulate one policy")
    _add_network(p)
    _add_policy(p)
    _add_sim(p)

    p = sub.add_parser("compare-policies", help="simulate several policies on the same seeds")
    _add_network(p)
    p.add_argument("--policies", default=None,
                   help="comma-separated policies (default: jsq plus jsr or jsqas)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    _add_sim(p)

    p = sub.add_parser("drift-scan", help="exhaustive small-state drift check")
    _add_network(p)
    _add_policy(p)
    p.add_argument("--max-total", type=int, default=6)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--M", type=int, default=0)
    p.add_argument("--mode", choices=["mean", "generator"], default="generator")
    p.add_argument("--out", default=None)

    p = sub.add_parser("run", help="run an experiment config file")
    p.add_argument("experiment", help="experiment JSON file")
    p.add_argument("--out", default=None, help="override the output directory")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args, argv)
    except (ConfigError, NetworkError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args, argv: list[str]) -> int:
    cmd = args.command
    if cmd == "fixtures":
        for path in ship_fixtures(args.out):
            print(path)
        return 0
    if cmd == "run":
        with open(args.experiment, encoding="utf-8") as fh:
            data = json.load(fh)
        if args.out:
            data["out"] = args.out
        return run_experiment(ExperimentConfig.from_dict(data), argv)

    spec, data = _spec(args)
    if cmd == "check-stabilizability":
        print(_dump(check_stabilizable(spec).to_dict()))
        return 0
    if cmd == "expand":
        print(_dump(expand(spec).to_dict()))
        return 0
    if cmd == "eval-testfn":
        net = expand(spec)
        x = _parse_state(args.state, net.names)
        if len(spec.classes) == 1 and args.alpha is None:
            params = SingleClassParams(args.delta if args.delta is not None else 0.1)
            reg = value_singleclass(net, x, params)
        else:
            base = MultiClassParams.default_for(net)
            a = args.alpha if args.alpha is not None else base.alpha
            params = MultiClassParams(a, args.beta if args.beta is not None else a,
                                      args.gamma if args.gamma is not None else base.gamma)
            reg = value_multiclass(net, x, params)
        print(_dump({"state": dict(zip(net.names, x)), "params": asdict(params),
                     **reg.to_dict(net)}))
        return 0
    if cmd == "simulate":
        sim = _sim_cfg(args)
        pc = _policy_cfg(args)
        out = Path(args.out) if args.out else None
        summary = run_simulation(spec, pc, sim, out)
        if out is not None:
            write_manifest(out, {"network": data, "policy": pc, "sim": asdict(sim)},
                           sim.seed, argv)
        print(_dump(summary["verdict"]))
        return 0
    if cmd == "compare-policies":
        sim = _sim_cfg(args)
        if args.policies:
            names = [p.strip() for p in args.policies.split(",") if p.strip()]
        else:
            names = ["jsq", "jsqas" if len(spec.classes) == 1 else "jsr"]
        pcs = [_policy_cfg(args, n) for n in names]
        out = Path(args.out) if args.out else None
        table = compare_policies(spec, pcs, sim, out)
        if out is not None:
            write_manifest(out, {"network": data, "policies": pcs, "sim": asdict(sim)},
                           sim.seed, argv)
        print(format_table(table))
        return 0
    if cmd == "drift-scan":
        cfg = ScanConfig(args.max_total, args.epsilon, args.M, args.mode)
        pc = _policy_cfg(args)
        report = run_scan(spec, pc, cfg)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "scan.json").write_text(_dump(report) + "\n", encoding="utf-8")
            write_manifest(out, {"network": data, "policy": pc, "scan": asdict(cfg)}, None, argv)
        print(_dump(report))
        return 0
    raise ConfigError(f"unknown command {cmd}")  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
