"""Seeded generators and brute-force oracles for the property suites.

Random networks come with AC-feasible operating points built backwards:
voltages and angles are sampled first, branch flows follow from the Pi
model, and loads and generator limits are then chosen so that the sampled
point balances exactly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .conic import Cone, LinearFacet
from .envelopes import (Interval, cos_envelope, mccormick, mf_trilinear, nested_mccormick,
                        sin_envelope, square_envelope)
from .netdata import Branch, Bus, Generator, Network
from .qcmodel import ACPoint, branch_flows, check_ac_point

TOPOLOGIES = ("path", "ring", "tree")
MAX_ANGLE = math.radians(60.0)
RETRIES = 50


@dataclass(frozen=True)
class RandomNetworkSpec:
    n_buses: int = 3
    topology: str = "path"
    seed: int = 0
    g_range: tuple[float, float] = (0.5, 5.0)
    x_over_r: tuple[float, float] = (2.0, 10.0)
    charge_range: tuple[float, float] = (0.0, 0.2)
    v_width: tuple[float, float] = (0.05, 0.15)
    angle_range: tuple[float, float] = (0.3, MAX_ANGLE)
    chords: int = 1
    tap_prob: float = 0.0
    unlimited_prob: float = 0.2

    def __post_init__(self):
        if not 2 <= self.n_buses <= 6:
            raise ValueError("n_buses must be between 2 and 6")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")
        if self.topology == "ring" and self.n_buses < 3:
            raise ValueError("a ring needs at least 3 buses")
        if not 0 < self.angle_range[0] <= self.angle_range[1] <= MAX_ANGLE:
            raise ValueError("angle_range must lie in (0, 60 degrees]")


def _edges(spec: RandomNetworkSpec, rng: np.random.Generator) -> list[tuple[int, int]]:
    n = spec.n_buses
    if spec.topology == "path":
        return [(i, i + 1) for i in range(1, n)]
    if spec.topology == "ring":
        return [(i, i + 1) for i in range(1, n)] + [(n, 1)]
    edges = [(int(rng.integers(1, i)), i) for i in range(2, n + 1)]
    present = set(edges)
    candidates = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)
                  if (a, b) not in present and (b, a) not in present]
    rng.shuffle(candidates)
    return edges + [tuple(c) for c in candidates[:spec.chords]]


def gen_network(spec: RandomNetworkSpec) -> Network:
    rng = np.random.default_rng(spec.seed)
    buses = []
    for i in range(1, spec.n_buses + 1):
        width = rng.uniform(*spec.v_width)
        centre = rng.uniform(0.98, 1.02)
        buses.append(Bus(i, v_min=centre - width / 2, v_max=centre + width / 2,
                         g_shunt=float(rng.choice([0.0, rng.uniform(0.0, 0.05)])),
                         b_shunt=float(rng.choice([0.0, rng.uniform(-0.05, 0.1)])),
                         is_reference=(i == 1)))
    branches = []
    for k, (f, t) in enumerate(_edges(spec, rng), start=1):
        if rng.random() < 0.5:
            f, t = t, f
        g = rng.uniform(*spec.g_range)
        b = -g * rng.uniform(*spec.x_over_r)
        lo = -rng.uniform(*spec.angle_range)
        hi = rng.uniform(*spec.angle_range)
        tap = rng.uniform(0.95, 1.05) if rng.random() < spec.tap_prob else 1.0
        s_max = None if rng.random() < spec.unlimited_prob else rng.uniform(0.5, 3.0)
        branches.append(Branch(k, int(f), int(t), g=g, b=b, b_charge=rng.uniform(*spec.charge_range),
                               tap=tap, s_max=s_max, theta_min=lo, theta_max=hi))
    gen_buses = [1] + [i for i in range(2, spec.n_buses + 1) if rng.random() < 0.4]
    generators = [Generator(i, p_min=0.0, p_max=rng.uniform(1.0, 3.0), q_min=-rng.uniform(0.5, 2.0),
                            q_max=rng.uniform(0.5, 2.0), cost_c2=rng.uniform(0.0, 20.0),
                            cost_c1=rng.uniform(5.0, 40.0), cost_c0=rng.uniform(0.0, 10.0))
                  for i in gen_buses]
    return Network(100.0, tuple(buses), tuple(generators), tuple(branches),
                   name=f"random-{spec.topology}-{spec.n_buses}-{spec.seed}")


def _sample_angles(network: Network, rng: np.random.Generator, scale: float) -> dict[int, float]:
    return {b.id: 0.0 if b.is_reference else float(rng.uniform(-scale, scale)) for b in network.buses}


def _angles_ok(network: Network, theta) -> bool:
    return all(br.theta_min <= theta[br.from_bus] - theta[br.to_bus] <= br.theta_max
               for br in network.branches)


def _flows_ok(network: Network, v, theta) -> bool:
    for br in network.branches:
        if br.s_max is None:
            continue
        sf, st = branch_flows(br, v[br.from_bus], v[br.to_bus], theta[br.from_bus] - theta[br.to_bus])
        if max(abs(sf), abs(st)) > br.s_max:
            return False
    return True


def _widen_limits(network: Network, v, theta) -> Network:
    branches = []
    for br in network.branches:
        if br.s_max is not None:
            sf, st = branch_flows(br, v[br.from_bus], v[br.to_bus], theta[br.from_bus] - theta[br.to_bus])
            br = Branch(**{**br.__dict__, "s_max": max(br.s_max, 1.05 * max(abs(sf), abs(st)))})
        branches.append(br)
    return network.replace(branches=tuple(branches))


def gen_feasible_point(network: Network, seed: int = 0, flat: bool = False) -> tuple[Network, ACPoint]:
    """Sample ``(V, theta)`` and rewrite loads and generator limits around it.

    Returns a modified network for which the returned point is AC feasible.
    With ``flat=True`` the point is ``V = 1, theta = 0`` (voltage boxes are
    widened to contain 1 if needed).
    """
    rng = np.random.default_rng(seed)
    if flat:
        v = {b.id: 1.0 for b in network.buses}
        theta = {b.id: 0.0 for b in network.buses}
        network = network.replace(buses=tuple(
            Bus(**{**b.__dict__, "v_min": min(b.v_min, 1.0), "v_max": max(b.v_max, 1.0)})
            for b in network.buses))
    else:
        scale = 0.3
        for attempt in range(RETRIES):
            v = {b.id: float(rng.uniform(b.v_min, b.v_max)) for b in network.buses}
            theta = _sample_angles(network, rng, scale)
            if _angles_ok(network, theta) and _flows_ok(network, v, theta):
                break
            scale *= 0.9
        else:
            theta = {b.id: 0.0 for b in network.buses}
            if not _angles_ok(network, theta):
                raise ValueError("angle bounds exclude the zero angle profile")
        if not _flows_ok(network, v, theta):
            network = _widen_limits(network, v, theta)

    inj = {b.id: complex(0.0, 0.0) for b in network.buses}
    for br in network.branches:
        sf, st = branch_flows(br, v[br.from_bus], v[br.to_bus], theta[br.from_bus] - theta[br.to_bus])
        inj[br.from_bus] += sf
        inj[br.to_bus] += st

    pg = [0.0] * len(network.generators)
    qg = [0.0] * len(network.generators)
    buses = []
    for bus in network.buses:
        i = bus.id
        v2 = v[i] ** 2
        need = inj[i] + complex(bus.g_shunt * v2, -bus.b_shunt * v2)
        gens = network.generators_at(i)
        if gens and not flat:
            load = complex(rng.uniform(0.0, 0.5), rng.uniform(-0.1, 0.2))
        else:
            load = complex(0.0, 0.0)
        supply = need + load
        if gens:
            share = supply / len(gens)
            for k in gens:
                pg[k], qg[k] = share.real, share.imag
        else:
            load = -need
        buses.append(Bus(**{**bus.__dict__, "p_load": load.real, "q_load": load.imag}))

    generators = []
    for k, g in enumerate(network.generators):
        margin = 0.0 if flat else rng.uniform(0.05, 0.5)
        generators.append(Generator(g.bus, p_min=min(g.p_min, pg[k] - margin), p_max=max(g.p_max, pg[k] + margin),
                                    q_min=min(g.q_min, qg[k] - margin), q_max=max(g.q_max, qg[k] + margin),
                                    cost_c2=g.cost_c2, cost_c1=g.cost_c1, cost_c0=g.cost_c0))
    out = network.replace(buses=tuple(buses), generators=tuple(generators))
    point = ACPoint(v, theta, pg, qg)
    _assert_feasible(out, point)
    return out, point


def _assert_feasible(network: Network, point: ACPoint):
    report = check_ac_point(network, point)
    if report.worst > 1e-9:
        raise AssertionError(f"constructed point is not feasible: {report.residuals}")


# ---------------------------------------------------------------------------
# envelope oracles

KINDS = ("square", "bilinear", "sin", "cos", "trilinear", "trilinear_cos")


def envelope_relations(kind: str, box) -> tuple[list[LinearFacet], list[Cone]]:
    """Emitted relations for one envelope kind over ``box`` using tags x, y, z, t, w."""
    if kind == "square":
        facets, cone = square_envelope("x", "t", box)
        return facets, [cone]
    if kind == "bilinear":
        return mccormick("x", "y", "t", *box), []
    if kind == "sin":
        return sin_envelope("x", "t", box), []
    if kind == "cos":
        facets, cone = cos_envelope("x", "t", box)
        return facets, [cone] if cone is not None else []
    if kind in ("trilinear", "trilinear_cos"):
        env = mf_trilinear("x", "y", "z", "t", *box, w="w", cosine=kind == "trilinear_cos")
        return list(env.facets), []
    raise ValueError(f"unknown envelope kind {kind!r}")


def _true_points(kind: str, box, density: int):
    if kind in ("square", "sin", "cos"):
        f = {"square": lambda x: x * x, "sin": math.sin, "cos": math.cos}[kind]
        for x in np.linspace(box.lo, box.hi, density):
            yield {"x": float(x), "t": f(float(x))}
    elif kind == "bilinear":
        bx, by = box
        for x, y in itertools.product(np.linspace(bx.lo, bx.hi, density), np.linspace(by.lo, by.hi, density)):
            yield {"x": float(x), "y": float(y), "t": float(x * y)}
    else:
        bx, by, bz = box
        grids = [np.linspace(b.lo, b.hi, density) for b in box]
        for x, y, z in itertools.product(*grids):
            yield {"x": float(x), "y": float(y), "z": float(z), "w": float(x * y), "t": float(x * y * z)}


def envelope_oracle(kind: str, box, density: int) -> float:
    """Largest violation of any emitted relation over a grid on the true graph.

    The result is signed: ``-min slack``. Values at or below zero mean every
    grid point satisfies every relation.
    """
    facets, cones = envelope_relations(kind, box)
    worst = -math.inf
    for point in _true_points(kind, box, density):
        for f in facets:
            worst = max(worst, -f.slack(point))
        for c in cones:
            worst = max(worst, c.residual(point))
    return worst


def trilinear_range(facets: list[LinearFacet], points, w_box: Interval,
                    t_box: Interval) -> tuple[np.ndarray, np.ndarray]:
    """Min and max of ``t`` allowed by linear facets at each fixed ``(x, y, z)``.

    ``w`` (the auxiliary product used by nested McCormick) is free in ``w_box``.
    The points are independent, so all of them go into one block-diagonal LP
    per direction; optimizing the sum optimizes every block.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    rows, cols, vals, rhs, eq_rows, eq_cols, eq_vals, eq_rhs = [], [], [], [], [], [], [], []
    for f in facets:
        ct, cw = f.coefficients.get("t", 0.0), f.coefficients.get("w", 0.0)
        rest = f.constant + sum(f.coefficients.get(k, 0.0) * points[:, j] for j, k in enumerate("xyz"))
        sign = -1.0 if f.sense == ">=" else 1.0
        target = (eq_rows, eq_cols, eq_vals, eq_rhs) if f.sense == "==" else (rows, cols, vals, rhs)
        base = len(target[3])
        for p in range(n):
            for off, c in ((0, ct), (1, cw)):
                if c != 0.0:
                    target[0].append(base + p)
                    target[1].append(2 * p + off)
                    target[2].append(sign * c)
        target[3].extend(-sign * rest)
    a_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(len(rhs), 2 * n)) if rhs else None
    a_eq = sparse.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(len(eq_rhs), 2 * n)) if eq_rhs else None
    bounds = [(t_box.lo, t_box.hi), (w_box.lo, w_box.hi)] * n
    out = []
    for sign in (1.0, -1.0):
        c = np.zeros(2 * n)
        c[0::2] = sign
        res = linprog(c, A_ub=a_ub, b_ub=rhs or None, A_eq=a_eq, b_eq=eq_rhs or None,
                      bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"envelope LP failed: {res.message}")
        out.append(res.x[0::2])
    return out[0], out[1]


def dominance_gap(box, density: int = 5, cosine: bool = False) -> tuple[float, float]:
    """How far the MF envelope is looser than nested McCormick on a grid.

    Returns ``(upper_excess, lower_deficit)``: the largest amounts by which the
    MF maximum exceeds the nested maximum and the MF minimum falls below the
    nested minimum. Both are <= 0 when MF dominates.
    """
    bx, by, bz = box
    mf = list(mf_trilinear("x", "y", "z", "t", bx, by, bz, w="w", cosine=cosine).facets)
    nested = nested_mccormick("x", "y", "z", "t", bx, by, bz, w="w")
    w_box = bx * by
    t_box = w_box * bz
    # pad so the box never binds before the facets do
    pad = 1.0 + t_box.width
    t_box = Interval(t_box.lo - pad, t_box.hi + pad)
    points = list(itertools.product(*(np.linspace(b.lo, b.hi, density) for b in box)))
    lo_mf, hi_mf = trilinear_range(mf, points, w_box, t_box)
    lo_nm, hi_nm = trilinear_range(nested, points, w_box, t_box)
    return float(np.max(hi_mf - hi_nm)), float(np.max(lo_nm - lo_mf))


def vertex_tightness(box, cosine: bool = False) -> float:
    """Worst distance between the envelope and the product at the 8 box vertices.

    At each vertex the tightest facet on each side is found; the returned value
    is the largest such gap over vertices and sides (0 means tight everywhere).
    Sides completed by nested McCormick are evaluated with ``w = x*y``.
    """
    facets = list(mf_trilinear("x", "y", "z", "t", *box, w="w", cosine=cosine).facets)
    worst = 0.0
    for x, y, z in itertools.product(*box):
        base = {"x": x, "y": y, "z": z, "w": x * y}
        true = x * y * z
        for side in ("lower", "upper"):
            bounds = []
            for f in facets:
                ct = f.coefficients.get("t", 0.0)
                if ct == 0.0 or f.sense == "==":
                    continue
                rest = f.value({**base, "t": 0.0})
                implied = -rest / ct
                is_lower = (f.sense == ">=") == (ct > 0)
                if is_lower == (side == "lower"):
                    bounds.append(implied)
            if not bounds:
                return math.inf
            best = max(bounds) if side == "lower" else min(bounds)
            worst = max(worst, abs(best - true))
    return worst


def random_box(rng: np.random.Generator, regime: str) -> tuple[Interval, Interval, Interval]:
    """Random trilinear box; ``regime`` picks the sign of the third factor."""
    def vbox():
        lo = rng.uniform(0.8, 1.05)
        return Interval(lo, lo + rng.uniform(0.01, 0.3))

    if regime == "positive":
        zl = rng.uniform(0.0, 0.8)
        bz = Interval(zl, zl + rng.uniform(0.01, 0.5))
    elif regime == "negative":
        zu = -rng.uniform(0.0, 0.8)
        bz = Interval(zu - rng.uniform(0.01, 0.5), zu)
    elif regime == "mixed":
        bz = Interval(-rng.uniform(0.01, 0.8), rng.uniform(0.01, 0.8))
    elif regime == "cos":
        zl = rng.uniform(0.5, 0.99)
        bz = Interval(zl, min(1.0, zl + rng.uniform(0.0, 0.5)))
    else:
        raise ValueError(regime)
    return vbox(), vbox(), bz
