import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from qcopf.conic import LinearFacet
from qcopf.envelopes import (Interval, cos_envelope, dedupe, mccormick, mf_trilinear, nested_mccormick,
                             sin_envelope, square_envelope, trig_bounds)
from qcopf.testkit import dominance_gap, envelope_oracle, trilinear_range, vertex_tightness


def implied_range(facets, target, point):
    """Interval for ``target`` implied by linear facets with other tags fixed."""
    lo, hi = -math.inf, math.inf
    for f in facets:
        c = f.coefficients.get(target, 0.0)
        if c == 0.0:
            continue
        rest = f.value({**point, target: 0.0})
        v = -rest / c
        if f.sense == "==":
            lo, hi = max(lo, v), min(hi, v)
        elif (f.sense == ">=") == (c > 0):
            lo = max(lo, v)
        else:
            hi = min(hi, v)
    return lo, hi


# ---------------------------------------------------------------- square

def test_square_upper_facet_value():
    facets, _ = square_envelope("x", "t", Interval(1, 2))
    assert implied_range(facets, "t", {"x": 1.5})[1] == pytest.approx(2.5)


def test_square_collapsed_box_pins_value():
    a = 1.07
    facets, cone = square_envelope("x", "t", Interval(a, a))
    assert implied_range(facets, "t", {"x": a})[1] == pytest.approx(a * a, abs=1e-15)
    assert cone.residual({"x": a, "t": a * a}) <= 1e-15
    assert cone.residual({"x": a, "t": a * a - 1e-6}) > 0


def test_square_symmetric_box_at_zero():
    facets, cone = square_envelope("x", "t", Interval(-1, 1))
    assert implied_range(facets, "t", {"x": 0.0})[1] == pytest.approx(1.0)
    assert cone.residual({"x": 0.0, "t": 0.0}) <= 0 and cone.residual({"x": 0.0, "t": -1e-3}) > 0


# ---------------------------------------------------------------- McCormick

def test_mccormick_unit_box_midpoint():
    lo, hi = implied_range(mccormick("x", "y", "t", Interval(0, 1), Interval(0, 1)), "t", {"x": .5, "y": .5})
    assert (lo, hi) == pytest.approx((0.0, 0.5))


def test_mccormick_collapsed_reproduces_product():
    a = 0.7
    facets = mccormick("x", "y", "t", Interval(a, a), Interval(-2, 3))
    for y in np.linspace(-2, 3, 11):
        lo, hi = implied_range(facets, "t", {"x": a, "y": float(y)})
        assert lo == pytest.approx(a * y, abs=1e-14) and hi == pytest.approx(a * y, abs=1e-14)


def test_mccormick_tight_at_corners():
    bx = by = Interval(0.9, 1.1)
    facets = mccormick("x", "y", "t", bx, by)
    for x, y in itertools.product(bx, by):
        lo, hi = implied_range(facets, "t", {"x": x, "y": y})
        assert lo == pytest.approx(x * y, abs=1e-14) and hi == pytest.approx(x * y, abs=1e-14)


# ---------------------------------------------------------------- trig

def test_sin_envelope_at_zero_symmetric():
    facets = sin_envelope("x", "t", Interval(-math.pi / 3, math.pi / 3))
    assert len(facets) == 2
    lo, hi = implied_range(facets, "t", {"x": 0.0})
    expected = math.sin(math.pi / 6) - math.cos(math.pi / 6) * math.pi / 6
    assert hi == pytest.approx(expected, abs=1e-12) and lo == pytest.approx(-expected, abs=1e-12)
    assert abs(expected - 0.0466) < 1e-4


@pytest.mark.parametrize("box,n", [((0.1, 0.5), 3), ((-0.5, -0.1), 3), ((-0.2, 0.4), 2), ((0.0, 0.3), 3)])
def test_sin_facet_counts(box, n):
    assert len(sin_envelope("x", "t", Interval(*box))) == n


def test_sin_lower_chord_only_when_nonnegative():
    facets = sin_envelope("x", "t", Interval(0.1, 0.5))
    lo, _ = implied_range(facets, "t", {"x": 0.1})
    assert lo == pytest.approx(math.sin(0.1), abs=1e-12)


def test_sin_rejects_out_of_domain():
    with pytest.raises(ValueError):
        sin_envelope("x", "t", Interval(-2.0, 0.1))


def test_cos_envelope_at_zero():
    facets, cone = cos_envelope("x", "t", Interval(-math.pi / 3, math.pi / 3))
    lo, _ = implied_range(facets, "t", {"x": 0.0})
    assert lo == pytest.approx(0.5, abs=1e-12)
    assert cone.residual({"x": 0.0, "t": 1.0}) <= 1e-12
    assert cone.residual({"x": 0.0, "t": 1.0 + 1e-6}) > 0


def test_cos_quadratic_side_tight_at_extremes():
    _, cone = cos_envelope("x", "t", Interval(-0.2, 0.2))
    for x in (-0.2, 0.2):
        assert abs(cone.residual({"x": x, "t": math.cos(0.2)})) <= 1e-12
        assert cone.residual({"x": x, "t": math.cos(0.2) + 1e-6}) > 0


def test_cos_degenerate_zero_box():
    facets, cone = cos_envelope("x", "t", Interval(0.0, 0.0))
    assert cone is None
    assert implied_range(facets, "t", {"x": 0.0}) == pytest.approx((1.0, 1.0))


def test_cos_collapsed_box_pins_value():
    t0 = 0.3
    facets, cone = cos_envelope("x", "t", Interval(t0, t0))
    lo, _ = implied_range(facets, "t", {"x": t0})
    assert lo == pytest.approx(math.cos(t0), abs=1e-14)
    assert abs(cone.residual({"x": t0, "t": math.cos(t0)})) <= 1e-12
    assert cone.residual({"x": t0, "t": math.cos(t0) + 1e-6}) > 0


@pytest.mark.parametrize("box,expected", [
    ((-math.pi / 6, math.pi / 6), (-0.5, 0.5, math.cos(math.pi / 6), 1.0)),
    ((math.pi / 6, math.pi / 3), (0.5, math.sin(math.pi / 3), 0.5, math.cos(math.pi / 6))),
    ((0.0, 0.0), (0.0, 0.0, 1.0, 1.0)),
])
def test_trig_bounds(box, expected):
    tb = trig_bounds(Interval(*box))
    assert (tb.s_lo, tb.s_hi, tb.c_lo, tb.c_hi) == pytest.approx(expected, abs=1e-15)


# ---------------------------------------------------------------- trilinear

V = Interval(0.9, 1.1)

# boxes found by search that trigger each combination of cases; frozen
CASE_BOXES = {
    ("II",): ((1.0, 1.18), (0.82, 0.96), (0.07, 0.19)),
    ("II", "III"): ((0.8, 1.09), (0.87, 0.98), (0.56, 0.71)),
    ("II", "VI", "VII"): ((0.99, 1.2), (0.94, 1.14), (0.0, 0.18)),
    ("I", "IV"): ((0.82, 1.11), (0.86, 1.15), (-0.44, -0.31)),
    ("I",): ((0.95, 1.17), (0.83, 1.08), (-0.99, -0.79)),
    ("I", "V"): ((1.0, 1.2), (0.92, 1.13), (-0.86, -0.76)),
    ("VI", "VII"): ((0.84, 1.11), (0.9, 1.19), (-0.42, 0.14)),
}
COS_BOXES = {
    ("II",): ((0.91, 0.98), (0.87, 1.05), (0.6, 0.98)),
    ("II", "III"): ((0.91, 1.15), (0.89, 1.03), (0.74, 0.91)),
}


def as_box(raw):
    return tuple(Interval(*b) for b in raw)


def test_case_ii_example_vertex_tight():
    env = mf_trilinear("x", "y", "z", "t", V, V, Interval(0.1, 0.5))
    assert "II" in env.cases
    assert vertex_tightness((V, V, Interval(0.1, 0.5))) <= 1e-9


def test_negative_regime_names_case_i():
    env = mf_trilinear("x", "y", "z", "t", V, V, Interval(-0.5, -0.1))
    assert env.cases[0] == "I" and set(env.cases) <= {"I", "IV", "V"}


def test_mixed_regime_cases():
    assert mf_trilinear("x", "y", "z", "t", V, V, Interval(-0.3, 0.3)).cases == ("VI", "VII")


@pytest.mark.parametrize("cases", list(CASE_BOXES))
def test_case_boxes(cases):
    box = as_box(CASE_BOXES[cases])
    env = mf_trilinear("x", "y", "z", "t", *box)
    assert env.cases == cases
    assert envelope_oracle("trilinear", box, 11) <= 1e-9
    assert vertex_tightness(box) <= 1e-9


@pytest.mark.parametrize("cases", list(COS_BOXES))
def test_cosine_boxes(cases):
    box = as_box(COS_BOXES[cases])
    env = mf_trilinear("x", "y", "z", "t", *box, cosine=True)
    assert env.cases == cases
    assert envelope_oracle("trilinear_cos", box, 11) <= 1e-9
    assert vertex_tightness(box, cosine=True) <= 1e-9


def test_case_iii_fifth_facet_touches_vertices():
    """Guards the Gamma-3 reading of Case III: every Case III facet is tight at 3 vertices."""
    box = as_box(CASE_BOXES[("II", "III")])
    env = mf_trilinear("x", "y", "z", "t", *box)
    facets = [f for f in env.lower("t")]
    assert facets
    for f in facets:
        tight = sum(abs(f.slack({"x": x, "y": y, "z": z, "t": x * y * z, "w": x * y})) <= 1e-12
                    for x, y, z in itertools.product(*box))
        assert tight >= 3


def test_case_iv_facets_touch_vertices():
    box = as_box(CASE_BOXES[("I", "IV")])
    env = mf_trilinear("x", "y", "z", "t", *box)
    for f in env.upper("t"):
        tight = sum(abs(f.slack({"x": x, "y": y, "z": z, "t": x * y * z})) <= 1e-12
                    for x, y, z in itertools.product(*box))
        assert tight >= 3


def test_fallback_when_a_side_has_no_case():
    env = mf_trilinear("x", "y", "z", "t", V, V, Interval(0.1, 0.5))
    assert env.fallback == ("lower",)
    assert any("x*y" in f.coefficients for f in env.facets)


def test_cosine_only_consults_ii_and_iii():
    env = mf_trilinear("x", "y", "z", "t", V, V, Interval(0.8, 1.0), cosine=True)
    assert set(env.cases) <= {"II", "III"}
    with pytest.raises(ValueError):
        mf_trilinear("x", "y", "z", "t", V, V, Interval(-0.1, 1.0), cosine=True)


def test_non_positive_voltage_rejected():
    with pytest.raises(ValueError):
        mf_trilinear("x", "y", "z", "t", Interval(0.0, 1.0), V, Interval(0.1, 0.2))


def test_collapsed_factor_stays_valid():
    box = (Interval(1.0, 1.0), V, Interval(-0.3, 0.2))
    assert envelope_oracle("trilinear", box, 11) <= 1e-9
    box = (V, V, Interval(0.25, 0.25))
    assert envelope_oracle("trilinear", box, 11) <= 1e-9
    assert vertex_tightness(box) <= 1e-9


def test_dedupe_removes_identical_facets():
    f = LinearFacet({"x": 1.0, "y": -2.0}, 0.5, "<=")
    g = LinearFacet({"x": 1.0 + 1e-15, "y": -2.0}, 0.5, "<=")
    h = LinearFacet({"x": 1.0, "y": -2.0}, 0.5, ">=")
    assert dedupe([f, g, h]) == [f, h]


def test_nested_mccormick_side_selection():
    both = nested_mccormick("x", "y", "z", "t", V, V, Interval(0.1, 0.5), w="w")
    lower = nested_mccormick("x", "y", "z", "t", V, V, Interval(0.1, 0.5), w="w", side="lower")
    assert len(both) == 8 and len(lower) == 6


# ---------------------------------------------------------------- properties

def interval(lo_min, lo_max, w_min, w_max):
    return st.tuples(st.floats(lo_min, lo_max), st.floats(w_min, w_max)).map(lambda t: Interval(t[0], t[0] + t[1]))


angle_box = st.tuples(st.floats(-1.4, 1.4), st.floats(0.0, 1.4)).map(
    lambda t: Interval(t[0], min(t[0] + t[1], 1.45)))
vbox = interval(0.6, 1.2, 0.0, 0.4)
zbox = st.tuples(st.floats(-1.0, 1.0), st.floats(0.0, 1.0)).map(lambda t: Interval(t[0], min(t[0] + t[1], 1.0)))


@settings(max_examples=60, deadline=None)
@given(box=interval(-3, 3, 0, 3))
def test_square_containment(box):
    assert envelope_oracle("square", box, 101) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(bx=interval(-3, 3, 0, 3), by=interval(-3, 3, 0, 3))
def test_bilinear_containment(bx, by):
    assert envelope_oracle("bilinear", (bx, by), 51) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(box=angle_box)
def test_sin_cos_containment(box):
    assert envelope_oracle("sin", box, 101) <= 1e-9
    assert envelope_oracle("cos", box, 101) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(box=angle_box)
def test_sin_endpoints_consistent(box):
    for x in box:
        lo, hi = implied_range(sin_envelope("x", "t", box), "t", {"x": x})
        assert lo - 1e-12 <= math.sin(x) <= hi + 1e-12


@settings(max_examples=60, deadline=None)
@given(bx=vbox, by=vbox, bz=zbox)
def test_trilinear_containment_and_vertices(bx, by, bz):
    box = (bx, by, bz)
    assert envelope_oracle("trilinear", box, 5) <= 1e-9
    assert vertex_tightness(box) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(bx=vbox, by=vbox, bz=zbox)
def test_trilinear_dominates_nested(bx, by, bz):
    up, down = dominance_gap((bx, by, bz), density=3)
    assert up <= 1e-7 and down <= 1e-7


@settings(max_examples=30, deadline=None)
@given(bx=vbox, by=vbox, lo=st.floats(0.0, 1.0), width=st.floats(0.0, 1.0))
def test_cosine_product_containment(bx, by, lo, width):
    bz = Interval(lo, min(1.0, lo + width))
    box = (bx, by, bz)
    assert envelope_oracle("trilinear_cos", box, 5) <= 1e-9
    assert vertex_tightness(box, cosine=True) <= 1e-9
    up, down = dominance_gap(box, density=3, cosine=True)
    assert up <= 1e-7 and down <= 1e-7


def test_mf_strictly_tighter_somewhere():
    # the dominance check is not vacuous: MF cuts off part of the nested relaxation
    box = as_box(CASE_BOXES[("II", "III")])
    mf = list(mf_trilinear("x", "y", "z", "t", *box, w="w").facets)
    nested = nested_mccormick("x", "y", "z", "t", *box, w="w")
    point = [b.mid for b in box]
    w_box, t_box = box[0] * box[1], Interval(-5, 5)
    lo_mf, hi_mf = trilinear_range(mf, [point], w_box, t_box)
    lo_nm, hi_nm = trilinear_range(nested, [point], w_box, t_box)
    assert hi_mf[0] < hi_nm[0] - 1e-4 or lo_mf[0] > lo_nm[0] + 1e-4
