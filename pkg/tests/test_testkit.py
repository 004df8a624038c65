import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcopf.envelopes import Interval, mccormick
from qcopf.netdata import Branch, Bus, validate
from qcopf.qcmodel import BoundSet, build, check_ac_point
from qcopf.testkit import (KINDS, TOPOLOGIES, RandomNetworkSpec, dominance_gap, envelope_oracle,
                           envelope_relations, gen_feasible_point, gen_network, random_box, vertex_tightness)


def test_spec_validation():
    with pytest.raises(ValueError):
        RandomNetworkSpec(n_buses=1)
    with pytest.raises(ValueError):
        RandomNetworkSpec(n_buses=7)
    with pytest.raises(ValueError):
        RandomNetworkSpec(n_buses=2, topology="ring")
    with pytest.raises(ValueError):
        RandomNetworkSpec(topology="mesh")
    with pytest.raises(ValueError):
        RandomNetworkSpec(angle_range=(0.1, 2.0))


def test_deterministic_per_seed():
    spec = RandomNetworkSpec(n_buses=5, topology="tree", seed=11, tap_prob=0.5)
    assert gen_network(spec) == gen_network(spec)
    assert gen_network(spec) != gen_network(RandomNetworkSpec(n_buses=5, topology="tree", seed=12, tap_prob=0.5))
    a, pa = gen_feasible_point(gen_network(spec), 3)
    b, pb = gen_feasible_point(gen_network(spec), 3)
    assert a == b and pa == pb


@pytest.mark.parametrize("topology,n,expected", [("path", 4, 3), ("ring", 4, 4), ("tree", 4, 4), ("tree", 2, 1)])
def test_branch_counts(topology, n, expected):
    net = gen_network(RandomNetworkSpec(n_buses=n, topology=topology, seed=0))
    assert len(net.branches) == expected
    assert len(net.buses) == n
    assert net.reference.id == 1


@given(seed=st.integers(0, 10_000), n=st.integers(3, 6), topology=st.sampled_from(TOPOLOGIES))
@settings(max_examples=40, deadline=None)
def test_generated_networks_are_clean(seed, n, topology):
    net = gen_network(RandomNetworkSpec(n_buses=n, topology=topology, seed=seed, tap_prob=0.3))
    assert not [d for d in validate(net) if d.level == "error"]
    for br in net.branches:
        assert -math.radians(60) <= br.theta_min < 0 < br.theta_max <= math.radians(60)
        assert br.g > 0 and br.b < 0


@given(seed=st.integers(0, 10_000), n=st.integers(2, 6))
@settings(max_examples=40, deadline=None)
def test_generated_point_is_feasible(seed, n):
    net, pt = gen_feasible_point(gen_network(RandomNetworkSpec(n_buses=n, seed=seed, tap_prob=0.3)), seed)
    assert check_ac_point(net, pt).worst <= 1e-9


def test_flat_point_has_no_load():
    base = gen_network(RandomNetworkSpec(n_buses=4, topology="ring", seed=5))
    base = base.replace(buses=tuple(Bus(**{**b.__dict__, "g_shunt": 0.0, "b_shunt": 0.0}) for b in base.buses))
    base = base.replace(branches=tuple(Branch(**{**br.__dict__, "b_charge": 0.0}) for br in base.branches))
    net, pt = gen_feasible_point(base, flat=True)
    assert all(v == 1.0 for v in pt.v.values()) and all(t == 0.0 for t in pt.theta.values())
    assert all(b.p_load == 0.0 and b.q_load == 0.0 for b in net.buses)
    assert all(abs(p) < 1e-12 for p in pt.pg)


@pytest.mark.parametrize("seed", range(6))
def test_generated_point_bounds_relaxation(seed):
    net, pt = gen_feasible_point(gen_network(RandomNetworkSpec(n_buses=2 + seed % 5, seed=seed)), seed)
    ac = check_ac_point(net, pt).objective
    res = build(net, BoundSet.initial(net)).solve()
    assert res.status == "optimal"
    assert 100 * (ac - res.objective) / abs(res.objective) >= -1e-6


def test_relations_per_kind():
    box1 = Interval(-0.4, 0.6)
    boxes = {"square": box1, "bilinear": (box1, Interval(0.9, 1.1)), "sin": box1, "cos": box1,
             "trilinear": (Interval(0.9, 1.1), Interval(0.95, 1.05), box1),
             "trilinear_cos": (Interval(0.9, 1.1), Interval(0.95, 1.05), Interval(0.9, 1.0))}
    for kind in KINDS:
        facets, _ = envelope_relations(kind, boxes[kind])
        assert facets
        assert envelope_oracle(kind, boxes[kind], 7) <= 1e-9
    with pytest.raises(ValueError):
        envelope_relations("quartic", box1)


def test_oracle_detects_bad_relation():
    # a point off the true graph must register a negative slack
    facets = mccormick("x", "y", "t", Interval(0.0, 1.0), Interval(0.0, 1.0))
    true_points = [{"x": 0.5, "y": 0.5, "t": 0.25}]
    shifted = [{"x": 0.5, "y": 0.5, "t": 2.0}]
    assert min(f.slack(p) for f in facets for p in true_points) >= 0
    assert min(f.slack(p) for f in facets for p in shifted) < 0


@pytest.mark.parametrize("regime", ["positive", "negative", "mixed", "cos"])
def test_random_box_regimes(regime):
    rng = np.random.default_rng(0)
    for _ in range(20):
        bx, by, bz = random_box(rng, regime)
        assert bx.lo > 0 and by.lo > 0
        if regime == "positive":
            assert bz.lo >= 0
        elif regime == "negative":
            assert bz.hi <= 0
        elif regime == "mixed":
            assert bz.lo < 0 < bz.hi
        else:
            assert 0 < bz.lo and bz.hi <= 1.0
    with pytest.raises(ValueError):
        random_box(rng, "sideways")


def test_dominance_and_vertex_helpers_on_unit_box():
    box = (Interval(0.9, 1.1), Interval(0.9, 1.1), Interval(-0.5, 0.5))
    up, down = dominance_gap(box, density=3)
    assert up <= 1e-7 and down <= 1e-7
    assert vertex_tightness(box) <= 1e-9
