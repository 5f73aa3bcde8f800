from __future__ import annotations

from hypothesis import given, settings
from hypothesis import strategies as st

from nets import tandem
from qnet_mdi.expansion import ExpandedState, expand, initial_split, project_state, server_totals
from qnet_mdi.fixtures import load_fixture

import pytest


def test_bridge2_expansion():
    net = expand(load_fixture("bridge2"))
    assert net.names == ["1", "3a", "4", "2", "3b", "5"]
    assert [net.subservers[k].name for k in net.duplicate_groups["3"]] == ["3a", "3b"]
    assert net.route_subservers == ((0, 1), (2,), (3,), (4, 5))
    s3a = net.subservers[net.index("3a")]
    assert (s3a.pred, s3a.succ, s3a.position, s3a.server) == (0, None, 2, "3")


def test_wheatstone_expansion():
    net = expand(load_fixture("wheatstone1"))
    assert net.names == ["1a", "2", "1b", "3", "5a", "4", "5b"]
    assert net.first_subservers("c1") == [0, 2, 5]


def test_single_route_chain():
    net = expand(tandem(rates=(1, 1, 1)))
    assert net.names == ["1", "2", "3"]
    assert all(len(g) == 1 for g in net.duplicate_groups.values())


def test_projection_examples():
    net = expand(load_fixture("bridge2"))
    st_ = net.state({"3a": 2, "3b": 1, "4": 5})
    proj = project_state(net, st_)
    assert proj["3"] == {"c1": 2, "c2": 1}
    assert server_totals(net, st_.x) == {"1": 0, "2": 0, "3": 3, "4": 5, "5": 0}
    assert server_totals(net, [0] * net.size) == dict.fromkeys("12345", 0)


def test_initial_split_modes():
    net = expand(load_fixture("wheatstone1"))
    assert initial_split(net, {"1": 2}).named(net)["1a"] == 1
    assert initial_split(net, {"1": 2}).named(net)["1b"] == 1
    first = initial_split(net, {"1": 2}, "all-to-first").named(net)
    assert (first["1a"], first["1b"]) == (2, 0)
    assert initial_split(net, {}).x == [0] * net.size


def test_initial_split_by_class():
    net = expand(load_fixture("bridge2"))
    st_ = initial_split(net, {"3": {"c1": 1, "c2": 4}})
    assert st_.named(net)["3a"] == 1 and st_.named(net)["3b"] == 4


def test_initial_split_rejects_negative():
    net = expand(load_fixture("bridge2"))
    with pytest.raises(ValueError):
        initial_split(net, {"1": -1})


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=5, max_size=5),
       st.sampled_from(["balanced", "all-to-first"]))
def test_split_then_project_is_identity(counts, mode):
    net = expand(load_fixture("wheatstone1"))
    xbar = dict(zip("12345", counts))
    assert server_totals(net, initial_split(net, xbar, mode).x) == xbar


def test_state_copy_is_independent():
    s = ExpandedState([1, 2], {0}, {"1": 0})
    c = s.copy()
    c.x[0] = 9
    c.held.add(1)
    assert s.x == [1, 2] and s.held == {0}
