"""Bundled example networks.

``bridge2`` is the two-class bridge: class c1 travels S1 -> T1 over routes
(1,3) or (4); class c2 travels S2 -> T2 over (2) or (3,5).  Server 3 is shared
and slow.  ``wheatstone1`` is a single-class bridge whose topology is inferred
from its route expansion (routes (1,2), (1,3,5), (4,5)); it is flagged as such
in its ``notes`` field.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .network import NetworkSpec, from_dict

FIXTURE_NAMES = ("bridge2", "wheatstone1")


def fixture_dict(name: str) -> dict:
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}")
    text = resources.files("qnet_mdi").joinpath("fixtures", f"{name}.json").read_text("utf-8")
    return json.loads(text)


def load_fixture(name: str) -> NetworkSpec:
    return from_dict(fixture_dict(name))


def ship_fixtures(out_dir: str | Path) -> list[Path]:
    """Write every bundled fixture (validated first) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in FIXTURE_NAMES:
        data = fixture_dict(name)
        from_dict(data)
        path = out / f"{name}.json"
        path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
        written.append(path)
    return written
