"""Quadratic-convex relaxation of AC optimal power flow.

:func:`build` turns a :class:`~qcopf.netdata.Network` and a :class:`BoundSet`
into a :class:`QcModel`, a conic program over lifted variables

    w[i] ~ V_i^2, w[a,b] ~ V_a V_b, c[a,b] ~ w cos(theta_ab), s[a,b] ~ w sin(theta_ab)

with optional voltage-difference variables (vd, wd, whf, wht per branch)
and nested-McCormick and/or Meyer-Floudas envelopes for the trilinear
terms. By default the Meyer-Floudas facets are added on top of the nested
McCormick facets rather than replacing them: w[a,b] carries constraints of
its own (the Jabr cone, the voltage-difference identity), so the nested
facets written through w[a,b] are not implied by the trilinear hull in V.

One (w, c, s, C, S) group exists per unordered bus pair, oriented from the
smaller bus id to the larger.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from . import conic
from .conic import Cone, ConicProgram, LinearFacet, linear
from .envelopes import (Interval, cos_envelope, dedupe, mccormick, mf_trilinear,
                        sin_envelope, square_envelope, trig_bounds)
from .netdata import Network

OBJECTIVES = ("cost", "min", "max")
CONSISTENCY_GUARD = 1e-9


class QcBuildError(ValueError):
    pass


@dataclass(frozen=True)
class QcVariant:
    use_mf: bool = True
    use_vdiff: bool = True
    objective: str = "cost"
    target: str | None = None
    cutoff: float | None = None
    keep_nested: bool = True    # with use_mf, keep the w*C / w*S McCormick facets too

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if (self.target is None) != (self.objective == "cost"):
            raise ValueError("a target is required exactly when objective is not 'cost'")

    def with_objective(self, objective: str, target: str | None = None) -> "QcVariant":
        return QcVariant(self.use_mf, self.use_vdiff, objective, target, self.cutoff, self.keep_nested)

    @property
    def label(self) -> str:
        if self.use_mf and self.use_vdiff:
            return "all"
        missing = [n for n, on in (("mf", self.use_mf), ("vdiff", self.use_vdiff)) if not on]
        return "no_" + "_".join(missing)


VARIANTS = {
    "all": QcVariant(True, True),
    "no_mf": QcVariant(False, True),
    "no_vdiff": QcVariant(True, False),
    "no_mf_vdiff": QcVariant(False, False),
}


# ---------------------------------------------------------------------------
# variable tags

def V(i): return f"V[{i}]"
def TH(i): return f"theta[{i}]"
def W(i): return f"w[{i}]"
def WP(a, b): return f"w[{a},{b}]"
def CP(a, b): return f"c[{a},{b}]"
def SP(a, b): return f"s[{a},{b}]"
def CC(a, b): return f"C[{a},{b}]"
def SS(a, b): return f"S[{a},{b}]"
def PG(k): return f"pg[{k}]"
def QG(k): return f"qg[{k}]"
def PF(k): return f"pf[{k}]"
def QF(k): return f"qf[{k}]"
def PT(k): return f"pt[{k}]"
def QT(k): return f"qt[{k}]"
def VD(k): return f"vd[{k}]"
def WD(k): return f"wd[{k}]"
def WHF(k): return f"whf[{k}]"
def WHT(k): return f"wht[{k}]"
def COST(k): return f"cost[{k}]"
def DTH(k): return f"dtheta[{k}]"


def pair_of(branch) -> tuple[tuple[int, int], int]:
    """Canonical bus pair of a branch and the orientation sign (+1 if from < to)."""
    f, t = branch.from_bus, branch.to_bus
    return ((f, t), 1) if f < t else ((t, f), -1)


def bus_pairs(network: Network) -> dict[tuple[int, int], list]:
    pairs: dict[tuple[int, int], list] = {}
    for br in network.branches:
        p, _ = pair_of(br)
        pairs.setdefault(p, []).append(br)
    return pairs


# ---------------------------------------------------------------------------
# bounds

@dataclass(frozen=True)
class BoundSet:
    """Box bounds on V (per bus), theta_ft and V_f - V_t (per branch id)."""

    v: Mapping[int, Interval]
    theta: Mapping[int, Interval]
    vdiff: Mapping[int, Interval]

    @classmethod
    def initial(cls, network: Network) -> "BoundSet":
        v = {b.id: Interval(b.v_min, b.v_max) for b in network.buses}
        theta = {br.id: Interval(br.theta_min, br.theta_max) for br in network.branches}
        vdiff = {br.id: vdiff_range(v[br.from_bus], v[br.to_bus]) for br in network.branches}
        return cls(v, theta, vdiff)

    def replace(self, v=None, theta=None, vdiff=None) -> "BoundSet":
        return BoundSet(dict(v if v is not None else self.v),
                        dict(theta if theta is not None else self.theta),
                        dict(vdiff if vdiff is not None else self.vdiff))

    def contains(self, other: "BoundSet", tol: float = 0.0) -> bool:
        return all(self._family(name)[k].contains_interval(iv, tol)
                   for name in ("v", "theta", "vdiff")
                   for k, iv in other._family(name).items())

    def _family(self, name):
        return getattr(self, name)

    def check(self, network: Network):
        for b in network.buses:
            iv = self.v.get(b.id)
            if iv is None:
                raise QcBuildError(f"bus {b.id}: no voltage bounds")
            if iv.lo <= 0:
                raise QcBuildError(f"bus {b.id}: voltage lower bound must be positive")
        for br in network.branches:
            th = self.theta.get(br.id)
            if th is None:
                raise QcBuildError(f"branch {br.id}: no angle-difference bounds")
            if not (-math.pi / 2 < th.lo and th.hi < math.pi / 2):
                raise QcBuildError(f"branch {br.id}: angle bounds [{th.lo}, {th.hi}] not inside (-pi/2, pi/2)")
            vd = self.vdiff.get(br.id)
            if vd is None:
                raise QcBuildError(f"branch {br.id}: no voltage-difference bounds")
            outer = vdiff_range(self.v[br.from_bus], self.v[br.to_bus])
            if not outer.contains_interval(vd, 1e-12):
                raise QcBuildError(f"branch {br.id}: voltage-difference bounds exceed the voltage boxes")

    def to_dict(self) -> dict:
        enc = lambda m: {str(k): [iv.lo, iv.hi] for k, iv in m.items()}  # noqa: E731
        return {"v": enc(self.v), "theta": enc(self.theta), "vdiff": enc(self.vdiff)}

    @classmethod
    def from_dict(cls, d) -> "BoundSet":
        dec = lambda m: {int(k): Interval(*iv) for k, iv in m.items()}  # noqa: E731
        return cls(dec(d["v"]), dec(d["theta"]), dec(d["vdiff"]))


def vdiff_range(vf: Interval, vt: Interval) -> Interval:
    return Interval(vf.lo - vt.hi, vf.hi - vt.lo)


def pair_theta(bounds: BoundSet, branches) -> Interval:
    """Angle-difference box of a bus pair: intersection over its branches."""
    lo, hi = -math.inf, math.inf
    for br in branches:
        th = bounds.theta[br.id]
        _, sign = pair_of(br)
        a, b = (th.lo, th.hi) if sign > 0 else (-th.hi, -th.lo)
        lo, hi = max(lo, a), min(hi, b)
    if lo > hi:
        ids = ", ".join(str(br.id) for br in branches)
        raise QcBuildError(f"branches {ids}: parallel angle-difference bounds do not intersect")
    return Interval(lo, hi)


def derive_lifted_bounds(bounds: BoundSet, network: Network) -> dict[str, Interval]:
    out: dict[str, Interval] = {}
    for b in network.buses:
        v = bounds.v[b.id]
        out[W(b.id)] = Interval(v.lo * v.lo, v.hi * v.hi)
    for (a, b), branches in bus_pairs(network).items():
        w = bounds.v[a] * bounds.v[b]
        tb = trig_bounds(pair_theta(bounds, branches))
        out[WP(a, b)] = w
        out[CC(a, b)] = tb.cos
        out[SS(a, b)] = tb.sin
        out[CP(a, b)] = w * tb.cos
        out[SP(a, b)] = w * tb.sin
    for br in network.branches:
        vd = bounds.vdiff[br.id]
        out[VD(br.id)] = vd
        out[WD(br.id)] = vd.square()
        out[WHF(br.id)] = vd * bounds.v[br.from_bus]
        out[WHT(br.id)] = vd * bounds.v[br.to_bus]
    return out


# ---------------------------------------------------------------------------
# model

@dataclass
class QcModel:
    program: ConicProgram
    bounds: BoundSet
    variant: QcVariant
    lifted: dict[str, Interval]
    network: Network = field(repr=False)
    mf_cases: dict[str, tuple] = field(default_factory=dict)

    @property
    def var_map(self) -> dict[str, int]:
        return self.program.index

    def expression(self, target: str) -> dict[str, float]:
        """Linear expression for a tag; ``dtheta[k]`` is theta_from - theta_to of branch k."""
        if target.startswith("dtheta["):
            k = int(target[7:-1])
            br = next(b for b in self.network.branches if b.id == k)
            return {TH(br.from_bus): 1.0, TH(br.to_bus): -1.0}
        if target not in self.program.index:
            raise KeyError(target)
        return {target: 1.0}

    def cost_expression(self) -> tuple[dict[str, float], float]:
        coeffs: dict[str, float] = {}
        constant = 0.0
        for k, g in enumerate(self.network.generators):
            if g.cost_c2 > 0:
                coeffs[COST(k)] = g.cost_c2
            if g.cost_c1 != 0:
                coeffs[PG(k)] = g.cost_c1
            constant += g.cost_c0
        return coeffs, constant

    def solve(self, tolerances=None, max_iters=conic.DEFAULT_MAX_ITERS,
              backend=conic.DEFAULT_BACKEND) -> conic.SolveResult:
        return conic.solve(self.program, tolerances, max_iters, backend)


def _subst_terms(coeffs: Mapping[str, float], subs: Mapping[str, Mapping[str, float]]) -> dict[str, float]:
    out: dict[str, float] = {}
    for t, c in coeffs.items():
        for u, d in subs.get(t, {t: 1.0}).items():
            out[u] = out.get(u, 0.0) + c * d
    return out


def _subst_facet(f: LinearFacet, subs) -> LinearFacet:
    return LinearFacet(_subst_terms(f.coefficients, subs), f.constant, f.sense)


def _subst_cone(cone: Cone, subs) -> Cone:
    return Cone(cone.kind, tuple((_subst_terms(c, subs), k) for c, k in cone.entries))


def _eq(terms: Mapping[str, float], rhs: float = 0.0) -> LinearFacet:
    return linear({t: c for t, c in terms.items() if c != 0.0}, "==", rhs)


def build(network: Network, bounds: BoundSet, variant: QcVariant = VARIANTS["all"]) -> QcModel:
    bounds.check(network)
    lifted = derive_lifted_bounds(bounds, network)
    pairs = bus_pairs(network)
    prog = ConicProgram()
    rows: list[LinearFacet] = []
    cones: list[Cone] = []
    mf_cases: dict[str, tuple] = {}
    ref = network.reference.id

    # variables
    for b in network.buses:
        v = bounds.v[b.id]
        prog.add_var(V(b.id), v.lo, v.hi)
        if b.id == ref:
            prog.add_var(TH(b.id), 0.0, 0.0)
        else:
            prog.add_var(TH(b.id))
        w = lifted[W(b.id)]
        prog.add_var(W(b.id), w.lo, w.hi)
    for k, g in enumerate(network.generators):
        prog.add_var(PG(k), g.p_min, g.p_max)
        prog.add_var(QG(k), g.q_min, g.q_max)
    for (a, b) in pairs:
        for tag in (WP(a, b), CP(a, b), SP(a, b), CC(a, b), SS(a, b)):
            iv = lifted[tag]
            prog.add_var(tag, iv.lo, iv.hi)
    for br in network.branches:
        for tag in (PF(br.id), QF(br.id), PT(br.id), QT(br.id)):
            prog.add_var(tag)
        if variant.use_vdiff:
            for tag in (VD(br.id), WD(br.id), WHF(br.id), WHT(br.id)):
                iv = lifted[tag]
                prog.add_var(tag, iv.lo, iv.hi)
    if variant.objective == "cost" or variant.cutoff is not None:
        for k, g in enumerate(network.generators):
            if g.cost_c2 > 0:
                prog.add_var(COST(k), 0.0, math.inf)
                cones.append(Cone.rsoc(COST(k), 0.5, PG(k)))

    # power balance
    out_flows: dict[int, list[str]] = {b.id: [] for b in network.buses}
    for br in network.branches:
        out_flows[br.from_bus].append(br.id)
    for bus in network.buses:
        i = bus.id
        p_terms: dict[str, float] = {PG(k): 1.0 for k in network.generators_at(i)}
        q_terms: dict[str, float] = {QG(k): 1.0 for k in network.generators_at(i)}
        p_terms[W(i)] = p_terms.get(W(i), 0.0) - bus.g_shunt
        q_terms[W(i)] = q_terms.get(W(i), 0.0) + bus.b_shunt
        for br in network.branches:
            if br.from_bus == i:
                p_terms[PF(br.id)] = -1.0
                q_terms[QF(br.id)] = -1.0
            elif br.to_bus == i:
                p_terms[PT(br.id)] = -1.0
                q_terms[QT(br.id)] = -1.0
        p_terms = {t: c for t, c in p_terms.items() if c != 0.0}
        q_terms = {t: c for t, c in q_terms.items() if c != 0.0}
        if p_terms:
            rows.append(_eq(p_terms, bus.p_load))
        elif abs(bus.p_load) > 0:
            raise QcBuildError(f"bus {i}: isolated load cannot be served")
        if q_terms:
            rows.append(_eq(q_terms, bus.q_load))
        elif abs(bus.q_load) > 0:
            raise QcBuildError(f"bus {i}: isolated load cannot be served")

    # voltage squares
    for bus in network.buses:
        facets, cone = square_envelope(V(bus.id), W(bus.id), bounds.v[bus.id])
        rows.extend(facets)
        cones.append(cone)

    # pair-level lifted products
    for (a, b), branches in pairs.items():
        th = pair_theta(bounds, branches)
        subs = {"__theta__": {TH(a): 1.0, TH(b): -1.0}}
        va, vb = bounds.v[a], bounds.v[b]
        rows.extend(mccormick(V(a), V(b), WP(a, b), va, vb))
        rows.extend(_subst_facet(f, subs) for f in sin_envelope("__theta__", SS(a, b), th))
        cfacets, ccone = cos_envelope("__theta__", CC(a, b), th)
        rows.extend(_subst_facet(f, subs) for f in cfacets)
        if ccone is not None:
            cones.append(_subst_cone(ccone, subs))
        if variant.use_mf:
            env_c = mf_trilinear(V(a), V(b), CC(a, b), CP(a, b), va, vb, lifted[CC(a, b)],
                                 w=WP(a, b), cosine=True)
            env_s = mf_trilinear(V(a), V(b), SS(a, b), SP(a, b), va, vb, lifted[SS(a, b)],
                                 w=WP(a, b))
            rows.extend(env_c.facets)
            rows.extend(env_s.facets)
            mf_cases[CP(a, b)] = env_c.cases
            mf_cases[SP(a, b)] = env_s.cases
        if not variant.use_mf or variant.keep_nested:
            rows.extend(mccormick(WP(a, b), CC(a, b), CP(a, b), lifted[WP(a, b)], lifted[CC(a, b)]))
            rows.extend(mccormick(WP(a, b), SS(a, b), SP(a, b), lifted[WP(a, b)], lifted[SS(a, b)]))
        # c^2 + s^2 <= w_aa w_bb
        cones.append(Cone.rsoc(({W(a): 0.5}, 0.0), W(b), CP(a, b), SP(a, b)))

    # branches
    for br in network.branches:
        k, f, t = br.id, br.from_bus, br.to_bus
        (a, b), sign = pair_of(br)
        c, s = CP(a, b), SP(a, b)
        g, bb, tau = br.g, br.b, br.tap
        bsh = bb + br.b_charge / 2
        # from side: terms scaled by 1/tau^2, mutual terms by 1/tau
        rows.append(_eq({PF(k): 1.0, W(f): -g / tau**2, c: g / tau, s: sign * bb / tau}))
        rows.append(_eq({QF(k): 1.0, W(f): bsh / tau**2, c: -bb / tau, s: sign * g / tau}))
        rows.append(_eq({PT(k): 1.0, W(t): -g, c: g / tau, s: -sign * bb / tau}))
        rows.append(_eq({QT(k): 1.0, W(t): bsh, c: -bb / tau, s: -sign * g / tau}))
        th = bounds.theta[k]
        rows.append(linear({TH(f): 1.0, TH(t): -1.0}, ">=", th.lo))
        rows.append(linear({TH(f): 1.0, TH(t): -1.0}, "<=", th.hi))
        if br.s_max is not None:
            cones.append(Cone.soc(br.s_max, PF(k), QF(k)))
            cones.append(Cone.soc(br.s_max, PT(k), QT(k)))
        if variant.use_vdiff:
            vd = bounds.vdiff[k]
            rows.append(_eq({VD(k): 1.0, V(f): -1.0, V(t): 1.0}))
            facets, cone = square_envelope(VD(k), WD(k), vd)
            rows.extend(facets)
            cones.append(cone)
            # w_ft = (w_ff + w_tt - wd) / 2
            rows.append(_eq({WP(a, b): 1.0, W(f): -0.5, W(t): -0.5, WD(k): 0.5}))
            # vd^2 <= w_ff - 2 w_ft + w_tt
            cones.append(Cone.rsoc(({W(f): 0.5, W(t): 0.5, WP(a, b): -1.0}, 0.0), 1.0, VD(k)))
            rows.append(_eq({W(f): 1.0, W(t): -1.0, WHF(k): -1.0, WHT(k): -1.0}))
            rows.extend(mccormick(VD(k), V(f), WHF(k), vd, bounds.v[f]))
            rows.extend(mccormick(VD(k), V(t), WHT(k), vd, bounds.v[t]))
            den = g * g + bb * bb + bb * br.b_charge / 2
            if tau == 1.0 and (g != 0.0 or bb != 0.0) and abs(den) > CONSISTENCY_GUARD:
                rows.append(_eq({W(f): den, W(t): -den, PF(k): -g, PT(k): g,
                                 QF(k): bb, QT(k): -bb}))

    for row in dedupe(rows):
        if not row.is_trivial():
            prog.add_row(row)
    for cone in cones:
        prog.add_cone(cone)

    model = QcModel(prog, bounds, variant, lifted, network, mf_cases)
    if variant.cutoff is not None:
        coeffs, constant = model.cost_expression()
        prog.add_row(linear(coeffs, "<=", variant.cutoff - constant))
    if variant.objective == "cost":
        coeffs, constant = model.cost_expression()
        prog.set_objective(coeffs, constant)
    else:
        expr = model.expression(variant.target)
        sign = 1.0 if variant.objective == "min" else -1.0
        prog.set_objective({t: sign * c for t, c in expr.items()})
    return model


# ---------------------------------------------------------------------------
# AC points

@dataclass
class ACPoint:
    v: dict[int, float]
    theta: dict[int, float]
    pg: list[float]
    qg: list[float]


@dataclass
class ResidualReport:
    residuals: dict[str, float]
    objective: float

    @property
    def worst(self) -> float:
        return max(self.residuals.values(), default=0.0)


def branch_flows(br, vf: float, vt: float, theta_ft: float) -> tuple[complex, complex]:
    """Complex power entering the branch at each terminal, from the Pi model."""
    y = complex(br.g, br.b)
    ych = 1j * br.b_charge / 2
    tau = br.tap
    Vf = vf * complex(math.cos(theta_ft), math.sin(theta_ft))
    Vt = complex(vt, 0.0)
    i_f = (y + ych) / tau**2 * Vf - y / tau * Vt
    i_t = -y / tau * Vf + (y + ych) * Vt
    return Vf * i_f.conjugate(), Vt * i_t.conjugate()


def check_ac_point(network: Network, point: ACPoint) -> ResidualReport:
    res = {k: 0.0 for k in ("p_balance", "q_balance", "reference_angle", "p_gen", "q_gen",
                            "voltage", "angle_difference", "flow_limit_from", "flow_limit_to")}

    def bump(key, val):
        res[key] = max(res[key], val)

    inj = {b.id: complex(0.0, 0.0) for b in network.buses}
    for br in network.branches:
        f, t = br.from_bus, br.to_bus
        dth = point.theta[f] - point.theta[t]
        sf, st = branch_flows(br, point.v[f], point.v[t], dth)
        inj[f] += sf
        inj[t] += st
        bump("angle_difference", max(0.0, br.theta_min - dth, dth - br.theta_max))
        if br.s_max is not None:
            bump("flow_limit_from", max(0.0, abs(sf) - br.s_max))
            bump("flow_limit_to", max(0.0, abs(st) - br.s_max))
    for bus in network.buses:
        i = bus.id
        v2 = point.v[i] ** 2
        pg = sum(point.pg[k] for k in network.generators_at(i))
        qg = sum(point.qg[k] for k in network.generators_at(i))
        bump("p_balance", abs(pg - bus.p_load - bus.g_shunt * v2 - inj[i].real))
        bump("q_balance", abs(qg - bus.q_load + bus.b_shunt * v2 - inj[i].imag))
        bump("voltage", max(0.0, bus.v_min - point.v[i], point.v[i] - bus.v_max))
        if bus.is_reference:
            bump("reference_angle", abs(point.theta[i]))
    for k, g in enumerate(network.generators):
        bump("p_gen", max(0.0, g.p_min - point.pg[k], point.pg[k] - g.p_max))
        bump("q_gen", max(0.0, g.q_min - point.qg[k], point.qg[k] - g.q_max))
    obj = sum(g.cost(point.pg[k]) for k, g in enumerate(network.generators))
    return ResidualReport(res, obj)


def lift_ac_point(network: Network, point: ACPoint) -> dict[str, float]:
    """Image of an AC point under the lifting; covers every tag any variant uses."""
    out: dict[str, float] = {}
    for b in network.buses:
        out[V(b.id)] = point.v[b.id]
        out[TH(b.id)] = point.theta[b.id]
        out[W(b.id)] = point.v[b.id] ** 2
    for k, _ in enumerate(network.generators):
        out[PG(k)] = point.pg[k]
        out[QG(k)] = point.qg[k]
        out[COST(k)] = point.pg[k] ** 2
    for (a, b) in bus_pairs(network):
        w = point.v[a] * point.v[b]
        d = point.theta[a] - point.theta[b]
        out[WP(a, b)] = w
        out[CC(a, b)] = math.cos(d)
        out[SS(a, b)] = math.sin(d)
        out[CP(a, b)] = w * math.cos(d)
        out[SP(a, b)] = w * math.sin(d)
    for br in network.branches:
        f, t = br.from_bus, br.to_bus
        sf, st = branch_flows(br, point.v[f], point.v[t], point.theta[f] - point.theta[t])
        out[PF(br.id)], out[QF(br.id)] = sf.real, sf.imag
        out[PT(br.id)], out[QT(br.id)] = st.real, st.imag
        vd = point.v[f] - point.v[t]
        out[VD(br.id)] = vd
        out[WD(br.id)] = vd * vd
        out[WHF(br.id)] = vd * point.v[f]
        out[WHT(br.id)] = vd * point.v[t]
    return out
