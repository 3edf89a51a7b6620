import itertools

import numpy as np
import pytest

from batsnum import netmodel
from batsnum.loss import LossSpec
from batsnum.netmodel import (DecompositionError, Flow, Link, Network,
                              Schedule, ValidationError,
                              decompose_rate_vector,
                              enumerate_feasible_schedules,
                              max_weight_schedule, two_hop_interference)


def line_network(n, caps=None):
    caps = caps or [1.0] * n
    nodes = [f"v{i}" for i in range(n + 1)]
    links = [Link(f"e{i+1}", f"v{i}", f"v{i+1}", caps[i],
                  LossSpec.independent(0.2)) for i in range(n)]
    net = Network(nodes=nodes, links=links)
    net.interference = two_hop_interference(net)
    net.__post_init__()
    return net


def test_two_hop_interference_line():
    net = line_network(8)
    assert net.interference["e1"] == frozenset({"e2", "e3"})
    assert net.interference["e4"] == frozenset({"e2", "e3", "e5", "e6"})
    for e, conf in net.interference.items():
        for e2 in conf:
            assert e in net.interference[e2]


def test_three_link_line_only_singletons():
    net = line_network(3)
    scheds = enumerate_feasible_schedules(net)
    actives = {s.active for s in scheds}
    assert actives == {(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)}


def test_enumeration_matches_brute_force():
    net = line_network(8)
    scheds = enumerate_feasible_schedules(net)
    brute = []
    for bits in itertools.product((0, 1), repeat=8):
        s = Schedule(active=bits)
        if s.is_feasible(net):
            brute.append(bits)
    assert sorted(s.active for s in scheds) == sorted(brute)
    assert (1, 0, 0, 1, 0, 0, 1, 0) in {s.active for s in scheds}
    assert (0,) * 8 in {s.active for s in scheds}


def test_enumeration_guard():
    net = line_network(8)
    too_big = Network(
        nodes=[f"n{i}" for i in range(27)],
        links=[Link(f"l{i}", f"n{i}", f"n{i+1}", 1.0,
                    LossSpec.independent(0.0)) for i in range(26)])
    with pytest.raises(ValidationError):
        enumerate_feasible_schedules(too_big)
    assert enumerate_feasible_schedules(net)  # cache path


def test_max_weight_schedule():
    net = line_network(8)
    w = np.zeros(8)
    w[0] = 1.0
    s, val = max_weight_schedule(net, w)
    assert s.active[0] == 1 and val == pytest.approx(1.0)
    # the tie-break keeps the activation vector lexicographically smallest
    assert s.active == (1, 0, 0, 0, 0, 0, 0, 0)
    s, val = max_weight_schedule(net, np.ones(8))
    assert val == pytest.approx(3.0)
    s, val = max_weight_schedule(net, np.zeros(8))
    assert val == 0.0 and s.active == (0,) * 8


def test_max_weight_equals_enumeration_max():
    net = line_network(8, caps=[1, 2, 1, 0.5, 1, 1, 2, 1])
    rng = np.random.default_rng(3)
    scheds = enumerate_feasible_schedules(net)
    for _ in range(25):
        w = rng.random(8)
        _, val = max_weight_schedule(net, w)
        best = max(float(np.array(s.active) @ (w * net.capacities))
                   for s in scheds)
        assert val == pytest.approx(best, rel=1e-12)


def test_decompose_single_schedule_and_zero():
    net = line_network(8)
    target = np.zeros(8)
    assert decompose_rate_vector(net, target) == []
    s = Schedule(active=(1, 0, 0, 1, 0, 0, 1, 0))
    target = np.array(s.active, dtype=float)
    out = decompose_rate_vector(net, target)
    mix = np.zeros(8)
    total = 0.0
    for sched, share in out:
        mix += np.array(sched.active) * net.capacities * share
        total += share
        assert sched.is_feasible(net)
    assert total <= 1.0 + 1e-9
    assert np.all(mix >= target - 1e-9)


def test_decompose_midpoint():
    net = line_network(8)
    s1 = np.array((1, 0, 0, 1, 0, 0, 1, 0), dtype=float)
    s2 = np.array((0, 1, 0, 0, 1, 0, 0, 1), dtype=float)
    target = 0.5 * s1 + 0.5 * s2
    out = decompose_rate_vector(net, target)
    mix = sum(np.array(s.active) * net.capacities * w for s, w in out)
    assert np.all(mix >= target - 1e-9)
    assert sum(w for _, w in out) <= 1.0 + 1e-9


def test_decompose_infeasible_certificate():
    net = line_network(3)
    with pytest.raises(DecompositionError) as ei:
        decompose_rate_vector(net, np.array([1.0, 1.0, 1.0]))
    err = ei.value
    assert err.achievable_scale is not None and err.achievable_scale < 1.0
    assert err.binding_links


def test_flow_validation():
    net = line_network(4)
    Flow(id="ok", links=("e1", "e2", "e3"), batch_size=16).validate_against(net)
    with pytest.raises(ValidationError):
        Flow(id="gap", links=("e1", "e3"), batch_size=16).validate_against(net)
    with pytest.raises(ValidationError):
        Flow(id="dup", links=("e1", "e1"), batch_size=16)
    with pytest.raises(ValidationError):
        Flow(id="empty", links=(), batch_size=16)


def test_network_validation():
    with pytest.raises(ValidationError):
        Network(nodes=["a"], links=[Link("e", "a", "missing", 1.0,
                                         LossSpec.independent(0.0))])
    with pytest.raises(ValidationError):
        net = line_network(3)
        Network(nodes=net.nodes, links=net.links,
                interference={"e1": frozenset({"e2"}),
                              "e2": frozenset(),
                              "e3": frozenset()})
