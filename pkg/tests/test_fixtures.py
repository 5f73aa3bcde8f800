from __future__ import annotations

import json

import pytest

from qnet_mdi.fixtures import FIXTURE_NAMES, fixture_dict, load_fixture, ship_fixtures
from qnet_mdi.network import load_network


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_fixture_loads(name):
    spec = load_fixture(name)
    assert spec.name == name
    assert spec == load_fixture(name)


def test_bridge2_parameters():
    spec = load_fixture("bridge2")
    assert spec.rates == {"1": 1.0, "2": 1.0, "3": 0.25, "4": 1.0, "5": 1.0}
    assert [c.lam for c in spec.classes] == [1.0, 1.0]


def test_wheatstone_parameters_and_note():
    spec = load_fixture("wheatstone1")
    assert set(spec.rates.values()) == {0.75}
    assert [c.lam for c in spec.classes] == [1.0]
    assert spec.notes.startswith("INFERRED topology")


def test_unknown_fixture():
    with pytest.raises(KeyError):
        fixture_dict("nope")


def test_ship_fixtures_roundtrip(tmp_path):
    paths = ship_fixtures(tmp_path)
    assert len(paths) == len(FIXTURE_NAMES)
    for p in paths:
        assert load_network(p) == load_fixture(json.loads(p.read_text())["name"])
