"""Convex envelopes of squares, bilinear and trilinear products and trig functions.

Every generator works on variable tags and box bounds and returns
:class:`~qcopf.conic.LinearFacet` rows (and, where a curved side is needed,
a rotated :class:`~qcopf.conic.Cone`). Nothing here knows about power systems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .conic import Cone, LinearFacet, facet

DIVISOR_GUARD = 1e-12
DEDUP_TOL = 1e-12


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def contains_interval(self, other: "Interval", tol: float = 0.0) -> bool:
        return self.lo - tol <= other.lo and other.hi <= self.hi + tol

    def intersect(self, other: "Interval") -> "Interval":
        return Interval(max(self.lo, other.lo), min(self.hi, other.hi))

    def __mul__(self, other: "Interval") -> "Interval":
        p = (self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi)
        return Interval(min(p), max(p))

    def square(self) -> "Interval":
        lo2, hi2 = self.lo * self.lo, self.hi * self.hi
        if self.lo <= 0.0 <= self.hi:
            return Interval(0.0, max(lo2, hi2))
        return Interval(min(lo2, hi2), max(lo2, hi2))

    def __iter__(self):
        yield self.lo
        yield self.hi


@dataclass(frozen=True)
class TrigBounds:
    s_lo: float
    s_hi: float
    c_lo: float
    c_hi: float

    @property
    def sin(self) -> Interval:
        return Interval(self.s_lo, self.s_hi)

    @property
    def cos(self) -> Interval:
        return Interval(self.c_lo, self.c_hi)


def _check_angle_domain(bounds: Interval):
    if not (-math.pi / 2 < bounds.lo and bounds.hi < math.pi / 2):
        raise ValueError(f"angle bounds [{bounds.lo}, {bounds.hi}] must lie inside (-pi/2, pi/2)")


def square_envelope(x: str, xcheck: str, bounds: Interval) -> tuple[list[LinearFacet], Cone]:
    """Secant from above plus the cone ``xcheck >= x**2`` from below."""
    lo, hi = bounds
    upper = facet(xcheck, "<=", {x: hi + lo}, -hi * lo)
    # 2 * xcheck * 0.5 >= x^2
    return [upper], Cone.rsoc(xcheck, 0.5, x)


def mccormick(x: str, y: str, xy: str, bx: Interval, by: Interval) -> list[LinearFacet]:
    xl, xu = bx
    yl, yu = by
    return [
        facet(xy, ">=", {y: xl, x: yl}, -xl * yl),
        facet(xy, ">=", {y: xu, x: yu}, -xu * yu),
        facet(xy, "<=", {y: xl, x: yu}, -xl * yu),
        facet(xy, "<=", {y: xu, x: yl}, -xu * yl),
    ]


def _chord_slope(f, lo: float, hi: float, df) -> float:
    if hi - lo < DIVISOR_GUARD:
        return df(lo)
    return (f(lo) - f(hi)) / (lo - hi)


def sin_envelope(theta: str, scheck: str, bounds: Interval) -> list[LinearFacet]:
    _check_angle_domain(bounds)
    lo, hi = bounds
    half = 0.5 * max(abs(lo), abs(hi))
    ch, sh = math.cos(half), math.sin(half)
    out = [
        facet(scheck, "<=", {theta: ch}, -ch * half + sh),
        facet(scheck, ">=", {theta: ch}, ch * half - sh),
    ]
    slope = _chord_slope(math.sin, lo, hi, math.cos)
    chord_const = math.sin(lo) - slope * lo
    if lo >= 0.0:
        out.append(facet(scheck, ">=", {theta: slope}, chord_const))
    if hi <= 0.0:
        out.append(facet(scheck, "<=", {theta: slope}, chord_const))
    return out


def cos_envelope(theta: str, ccheck: str, bounds: Interval) -> tuple[list[LinearFacet], Cone | None]:
    """Chord from below and ``ccheck <= 1 - k * theta**2`` from above.

    With both bounds at (or within 1e-12 of) zero the quadratic side is 0/0
    and ``ccheck == 1`` is emitted in its place.
    """
    _check_angle_domain(bounds)
    lo, hi = bounds
    xm = max(abs(lo), abs(hi))
    slope = _chord_slope(math.cos, lo, hi, lambda t: -math.sin(t))
    chord = facet(ccheck, ">=", {theta: slope}, math.cos(lo) - slope * lo)
    if xm < DIVISOR_GUARD:
        # cos deviates from 1 by under 1e-24 here
        return [chord, LinearFacet({ccheck: 1.0}, -1.0, "==")], None
    k = 2.0 * math.sin(0.5 * xm) ** 2 / (xm * xm)   # (1 - cos xm) / xm^2 without cancellation
    # 2 * (0.5 * (1 - ccheck)) * (1 / k) >= theta^2
    cone = Cone.rsoc(({ccheck: -0.5}, 0.5), 1.0 / k, theta)
    return [chord], cone


def trig_bounds(bounds: Interval) -> TrigBounds:
    _check_angle_domain(bounds)
    lo, hi = bounds
    c_lo = min(math.cos(lo), math.cos(hi))
    if _sign(lo) == _sign(hi):
        c_hi = max(math.cos(lo), math.cos(hi))
    else:
        c_hi = 1.0
    return TrigBounds(math.sin(lo), math.sin(hi), c_lo, c_hi)


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


# ---------------------------------------------------------------------------
# trilinear products  V_l * V_m * z  with V_l, V_m > 0


@dataclass(frozen=True)
class TrilinearEnvelope:
    facets: tuple[LinearFacet, ...]
    cases: tuple[str, ...]
    fallback: tuple[str, ...]   # sides completed with nested McCormick

    def lower(self, xyz: str) -> list[LinearFacet]:
        return [f for f in self.facets if _side(f, xyz) == "lower"]

    def upper(self, xyz: str) -> list[LinearFacet]:
        return [f for f in self.facets if _side(f, xyz) == "upper"]


def _side(f: LinearFacet, target: str) -> str | None:
    c = f.coefficients.get(target, 0.0)
    if c == 0.0 or f.sense == "==":
        return None
    return "lower" if (f.sense == ">=") == (c > 0) else "upper"


def _mf_conditions(xl, xu, yl, yu, zl, zu) -> dict[str, bool]:
    c3 = (xu * yl * zl + xl * yu * zu <= xl * yu * zl + xu * yl * zu
          and xu * yl * zl + xl * yu * zu <= xu * yu * zl + xl * yl * zu)
    c4 = (xl * yl * zl + xu * yu * zu >= xu * yl * zl + xl * yu * zu
          and xl * yl * zl + xu * yu * zu >= xl * yu * zl + xu * yl * zu)
    c5 = (xu * yl * zl + xl * yu * zu >= xl * yu * zl + xu * yl * zu
          and xl * yl * zl + xu * yu * zu < xu * yl * zl + xl * yu * zu
          and xl * yl * zl + xu * yu * zu < xl * yu * zl + xu * yl * zu)
    return {
        "I": zu <= 0.0,
        "II": zl >= 0.0,
        "III": zl >= 0.0 and c3,
        "IV": zu <= 0.0 and c4,
        "V": zu <= 0.0 and c5,
        "VI": zl <= 0.0 <= zu,
        "VII": zl <= 0.0 <= zu,
    }


# Each facet is (a, b, c, d) meaning  t  <sense>  a*x + b*y + c*z + d,
# or ("collapsed", var) when its divisor vanishes.
def _mf_case_facets(case, xl, xu, yl, yu, zl, zu):
    if case == "I":
        return ">=", [
            (yu * zl, xl * zl, xl * yl, -xl * yu * zl - xl * yl * zl),
            (yu * zl, xl * zu, xl * yu, -xl * yu * zl - xl * yu * zu),
            (yl * zu, xu * zl, xu * yl, -xu * yl * zu - xu * yl * zl),
            (yl * zu, xu * zu, xu * yu, -xu * yl * zu - xu * yu * zu),
            (yl * zl, xu * zl, xl * yl, -xu * yl * zl - xl * yl * zl),
            (yu * zu, xl * zu, xu * yu, -xu * yu * zu - xl * yu * zu),
        ]
    if case == "II":
        return "<=", [
            (yl * zl, xu * zl, xu * yu, -xu * yu * zl - xu * yl * zl),
            (yu * zl, xl * zl, xu * yu, -xu * yu * zl - xl * yu * zl),
            (yl * zl, xu * zu, xu * yl, -xu * yl * zu - xu * yl * zl),
            (yu * zu, xl * zl, xl * yu, -xl * yu * zu - xl * yu * zl),
            (yl * zu, xu * zu, xl * yl, -xu * yl * zu - xl * yl * zu),
            (yu * zu, xl * zu, xl * yl, -xl * yu * zu - xl * yl * zu),
        ]
    if case == "III":
        facets = [
            (yl * zl, xl * zl, xl * yl, -2 * xl * yl * zl),
            (yu * zu, xu * zu, xu * yu, -2 * xu * yu * zu),
            (yl * zu, xl * zu, xu * yl, -xl * yl * zu - xu * yl * zu),
            (yu * zl, xu * zl, xl * yu, -xu * yu * zl - xl * yu * zl),
        ]
        dx = xu - xl
        if dx < DIVISOR_GUARD:
            facets.append(("collapsed", "x"))
        else:
            lam = xu * yu * zl - xl * yu * zu - xu * yl * zl + xu * yl * zu
            gam = xl * yl * zu - xu * yl * zl - xl * yu * zu + xl * yu * zl
            facets.append((lam / dx, xu * zl, xu * yl,
                           -lam * xl / dx - xu * yu * zl - xu * yl * zu + xl * yu * zu))
            facets.append((-gam / dx, xl * zu, xl * yu,
                           gam * xu / dx - xl * yl * zu - xl * yu * zl + xu * yl * zl))
        return ">=", facets
    if case == "IV":
        facets = [
            (yl * zu, xl * zu, xl * yl, -2 * xl * yl * zu),
            (yu * zl, xu * zl, xu * yu, -2 * xu * yu * zl),
            (yl * zl, xu * zu, xu * yl, -xu * yl * zu - xu * yl * zl),
            (yu * zu, xl * zl, xl * yu, -xl * yu * zu - xl * yu * zl),
        ]
        dz = zu - zl
        if dz < DIVISOR_GUARD:
            facets.append(("collapsed", "z"))
        else:
            lam = xu * yl * zl - xu * yu * zu - xl * yl * zl + xl * yu * zl
            gam = xu * yl * zu - xl * yl * zl - xu * yu * zu + xl * yu * zu
            facets.append((yl * zl, xl * zl, -lam / dz,
                           lam * zu / dz - xu * yl * zl - xl * yu * zl + xu * yu * zu))
            facets.append((yu * zu, xu * zu, gam / dz,
                           -gam * zl / dz - xu * yl * zu - xl * yu * zu + xl * yl * zl))
        return "<=", facets
    if case == "V":
        facets = [
            (yl * zu, xl * zu, xl * yl, -2 * xl * yl * zu),
            (yu * zl, xu * zl, xu * yu, -2 * xu * yu * zl),
            (yl * zl, xl * zl, xl * yu, -xl * yl * zl - xl * yu * zl),
            (yu * zu, xu * zu, xu * yl, -xu * yl * zu - xu * yu * zu),
        ]
        dy = yu - yl
        if dy < DIVISOR_GUARD:
            facets.append(("collapsed", "y"))
        else:
            lam = xl * yl * zl - xl * yu * zu - xu * yl * zl + xu * yl * zu
            gam = xl * yu * zl - xu * yl * zl - xl * yu * zu + xu * yu * zu
            facets.append((yl * zl, -lam / dy, xu * yl,
                           lam * yu / dy - xl * yl * zl - xu * yl * zu + xl * yu * zu))
            facets.append((yu * zu, gam / dy, xl * yu,
                           -gam * yl / dy - xl * yu * zl - xu * yu * zu + xu * yl * zl))
        return "<=", facets
    if case == "VI":
        facets = [
            (yu * zu, xu * zu, xu * yu, -2 * xu * yu * zu),
            (yu * zl, xl * zu, xl * yu, -xl * yu * zl - xl * yu * zu),
            (yu * zl, xl * zl, xl * yl, -xl * yu * zl - xl * yl * zl),
            (yl * zu, xu * zl, xu * yl, -xu * yl * zu - xu * yl * zl),
            (yl * zl, xu * zl, xl * yl, -xu * yl * zl - xl * yl * zl),
        ]
        dz = zu - zl
        if dz < DIVISOR_GUARD:
            facets.append(("collapsed", "z"))
        else:
            lam = xl * yu * zu - xu * yu * zl - xl * yl * zu + xu * yl * zu
            facets.append((yl * zu, xl * zu, lam / dz,
                           -lam * zl / dz - xl * yu * zu - xu * yl * zu + xu * yu * zl))
        return ">=", facets
    if case == "VII":
        facets = [
            (yu * zl, xu * zl, xu * yu, -2 * xu * yu * zl),
            (yl * zl, xu * zu, xu * yl, -xu * yl * zu - xu * yl * zl),
            (yu * zu, xl * zu, xl * yl, -xl * yu * zu - xl * yl * zu),
            (yu * zu, xl * zl, xl * yu, -xl * yu * zu - xl * yu * zl),
            (yl * zu, xu * zu, xl * yl, -xu * yl * zu - xl * yl * zu),
        ]
        dz = zu - zl
        if dz < DIVISOR_GUARD:
            facets.append(("collapsed", "z"))
        else:
            lam = xu * yl * zl - xu * yu * zu - xl * yl * zl + xl * yu * zl
            facets.append((yl * zl, xl * zl, -lam / dz,
                           lam * zu / dz - xu * yl * zl - xl * yu * zl + xu * yu * zu))
        return "<=", facets
    raise ValueError(case)


LOWER_CASES = ("I", "III", "VI")
UPPER_CASES = ("II", "IV", "V", "VII")


def nested_mccormick(vl: str, vm: str, z: str, xyz: str, bvl: Interval, bvm: Interval,
                     bz: Interval, w: str | None = None, side: str = "both") -> list[LinearFacet]:
    """Recursive McCormick: ``w = vl*vm`` then ``xyz = w*z``.

    ``side`` restricts the ``w*z`` facets to the lower or upper side; the
    four facets on ``w`` are always included.
    """
    w = w or f"{vl}*{vm}"
    bw = bvl * bvm
    out = mccormick(vl, vm, w, bvl, bvm)
    outer = mccormick(w, z, xyz, bw, bz)
    if side == "lower":
        outer = outer[:2]
    elif side == "upper":
        outer = outer[2:]
    return out + outer


def dedupe(facets, tol: float = DEDUP_TOL) -> list[LinearFacet]:
    seen = set()
    out = []
    for f in facets:
        k = f.key(tol)
        if k not in seen:
            seen.add(k)
            out.append(f)
    return out


def mf_trilinear(vl: str, vm: str, z: str, xyz: str, bvl: Interval, bvm: Interval, bz: Interval,
                 *, w: str | None = None, cosine: bool = False) -> TrilinearEnvelope:
    """Meyer-Floudas facets for ``xyz = vl * vm * z`` over a box with vl, vm > 0.

    Every case whose header condition holds contributes its facets. A side
    left empty by all applicable cases is completed with nested McCormick
    through the auxiliary product tag ``w`` (default ``"vl*vm"``).
    With ``cosine=True`` only Cases II and III are consulted.
    """
    if bvl.lo <= 0.0 or bvm.lo <= 0.0:
        raise ValueError("trilinear envelope needs strictly positive voltage lower bounds")
    if cosine and bz.lo < 0.0:
        raise ValueError("cosine factor must be non-negative")
    xl, xu = bvl
    yl, yu = bvm
    zl, zu = bz
    cond = _mf_conditions(xl, xu, yl, yu, zl, zu)
    names = ("I", "II", "III", "IV", "V", "VI", "VII")
    if cosine:
        names = ("II", "III")
    applied = tuple(c for c in names if cond[c])
    bounds = {"x": (xl, xu), "y": (yl, yu), "z": (zl, zu)}
    tags = (vl, vm, z)
    facets: list[LinearFacet] = []
    for case in applied:
        sense, rows = _mf_case_facets(case, xl, xu, yl, yu, zl, zu)
        for row in rows:
            if row[0] == "collapsed":
                facets.extend(_collapsed_exact(row[1], sense, tags, bounds, xyz))
                continue
            a, b, c, d = row
            facets.append(facet(xyz, sense, {vl: a, vm: b, z: c}, d))
    fallback = []
    if not any(c in applied for c in LOWER_CASES):
        fallback.append("lower")
    if not any(c in applied for c in UPPER_CASES):
        fallback.append("upper")
    if fallback:
        side = fallback[0] if len(fallback) == 1 else "both"
        facets.extend(nested_mccormick(vl, vm, z, xyz, bvl, bvm, bz, w=w, side=side))
    return TrilinearEnvelope(tuple(dedupe(facets)), applied, tuple(fallback))


def _collapsed_exact(var, sense, tags, bounds, xyz) -> list[LinearFacet]:
    """McCormick side of ``fixed * u * v`` when factor ``var`` has zero width."""
    names = dict(zip("xyz", tags))
    fixed = bounds[var][0]
    u, v = [k for k in "xyz" if k != var]
    (ul, uu), (vl, vu) = bounds[u], bounds[v]
    # side of u*v needed: same as the product's side when fixed >= 0
    want_lower = (sense == ">=") == (fixed >= 0)
    pairs = [(ul, vl), (uu, vu)] if want_lower else [(ul, vu), (uu, vl)]
    return [facet(xyz, sense, {names[v]: fixed * ub, names[u]: fixed * vb}, -fixed * ub * vb)
            for ub, vb in pairs]
