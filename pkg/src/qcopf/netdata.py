"""Per-unit network model and a MATPOWER case-file reader."""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, replace

DEFAULT_ANGLE_LIMIT = 1.0472  # rad, about 60 degrees


class CaseParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedFeatureError(CaseParseError):
    pass


class NetworkValidationError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = diagnostics
        super().__init__("; ".join(d.message for d in diagnostics if d.level == "error"))


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_min: float = 0.9
    v_max: float = 1.1
    is_reference: bool = False


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float = 0.0
    p_max: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0
    cost_c2: float = 0.0
    cost_c1: float = 0.0
    cost_c0: float = 0.0

    def cost(self, p: float) -> float:
        return self.cost_c2 * p * p + self.cost_c1 * p + self.cost_c0


@dataclass(frozen=True)
class Branch:
    """Pi-model line; ``s_max=None`` means no apparent-power limit."""

    id: int
    from_bus: int
    to_bus: int
    g: float
    b: float
    b_charge: float = 0.0
    tap: float = 1.0
    s_max: float | None = None
    theta_min: float = -DEFAULT_ANGLE_LIMIT
    theta_max: float = DEFAULT_ANGLE_LIMIT

    @property
    def unlimited(self) -> bool:
        return self.s_max is None


@dataclass(frozen=True)
class Network:
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "branches", tuple(self.branches))

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    @property
    def reference(self) -> Bus:
        refs = [b for b in self.buses if b.is_reference]
        if len(refs) != 1:
            raise NetworkValidationError([Diagnostic("error", f"{len(refs)} reference buses")])
        return refs[0]

    def generators_at(self, bus_id: int) -> list[int]:
        return [k for k, g in enumerate(self.generators) if g.bus == bus_id]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [asdict(b) for b in self.buses],
            "generators": [asdict(g) for g in self.generators],
            "branches": [asdict(br) for br in self.branches],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        return cls(
            base_mva=d["base_mva"],
            buses=tuple(Bus(**b) for b in d["buses"]),
            generators=tuple(Generator(**g) for g in d["generators"]),
            branches=tuple(Branch(**br) for br in d["branches"]),
            name=d.get("name", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> "Network":
        return replace(self, **changes)


@dataclass(frozen=True)
class Diagnostic:
    level: str        # "error" or "warning"
    message: str
    subject: str = ""


# ---------------------------------------------------------------------------
# MATPOWER reader

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
_BUS_COLS, _GEN_COLS, _BRANCH_COLS = 13, 10, 11


def _strip_comment(line: str) -> str:
    i = line.find("%")
    return line if i < 0 else line[:i]


def _scan_matrices(text: str) -> tuple[dict, dict]:
    """Collect ``mpc.<name> = [ ... ];`` tables and scalar assignments."""
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    scalars: dict[str, tuple[int, str]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i])
        m = _ASSIGN.match(line)
        i += 1
        if not m:
            continue
        name, rest = m.group(1), m.group(2).strip()
        if rest.startswith("{"):
            # cell arrays (bus names etc.) are skipped
            depth = rest.count("{") - rest.count("}")
            while depth > 0 and i < len(lines):
                seg = _strip_comment(lines[i])
                depth += seg.count("{") - seg.count("}")
                i += 1
            continue
        if not rest.startswith("["):
            scalars[name] = (lineno, rest.rstrip(";").strip())
            continue
        body = rest[1:]
        rows: list[tuple[int, list[float]]] = []
        closed = False
        cur_line = lineno
        while True:
            if "]" in body:
                body, closed = body[: body.index("]")], True
            for chunk in body.split(";"):
                toks = chunk.replace(",", " ").split()
                if toks:
                    try:
                        rows.append((cur_line, [float(t) for t in toks]))
                    except ValueError:
                        bad = next(t for t in toks if not _is_number(t))
                        raise CaseParseError(f"non-numeric entry {bad!r} in mpc.{name}", cur_line)
            if closed or i >= len(lines):
                break
            cur_line = i + 1
            body = _strip_comment(lines[i])
            i += 1
        if not closed:
            raise CaseParseError(f"unterminated table mpc.{name}", lineno)
        tables[name] = rows
    return tables, scalars


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _table(tables, name, min_cols):
    if name not in tables:
        raise CaseParseError(f"missing table mpc.{name}")
    rows = tables[name]
    for lineno, row in rows:
        if len(row) < min_cols:
            raise CaseParseError(f"mpc.{name} row has {len(row)} columns, expected at least {min_cols}", lineno)
    return rows


def parse_case(text: str, name: str = "") -> Network:
    """Read a MATPOWER-style case into a per-unit :class:`Network`.

    Out-of-service generators and branches are dropped. Angles are converted
    to radians; MATPOWER's zero or +/-360 angle limits mean "no limit" and are
    kept as +/-inf here (see :func:`sanitize`). Raises
    :class:`NetworkValidationError` if the result breaks a hard invariant.
    """
    tables, scalars = _scan_matrices(text)
    if "baseMVA" not in scalars:
        raise CaseParseError("missing mpc.baseMVA")
    lineno, raw = scalars["baseMVA"]
    try:
        base = float(raw)
    except ValueError:
        raise CaseParseError(f"bad baseMVA {raw!r}", lineno)
    if not base > 0:
        raise CaseParseError("baseMVA must be positive", lineno)

    buses = []
    for lineno, r in _table(tables, "bus", _BUS_COLS):
        btype = int(r[1])
        buses.append(Bus(
            id=int(r[0]), p_load=r[2] / base, q_load=r[3] / base,
            g_shunt=r[4] / base, b_shunt=r[5] / base,
            v_min=r[12], v_max=r[11], is_reference=(btype == 3),
        ))

    gen_rows = _table(tables, "gen", _GEN_COLS)
    cost_rows = _table(tables, "gencost", 4)
    if len(cost_rows) < len(gen_rows):
        raise CaseParseError(f"mpc.gencost has {len(cost_rows)} rows for {len(gen_rows)} generators",
                             cost_rows[-1][0] if cost_rows else None)
    generators = []
    for (lineno, r), (clineno, c) in zip(gen_rows, cost_rows):
        model, ncost = int(c[0]), int(c[3])
        if model == 1:
            raise UnsupportedFeatureError("piecewise-linear generator cost", clineno)
        if model != 2:
            raise CaseParseError(f"unknown cost model {model}", clineno)
        if ncost > 3:
            raise UnsupportedFeatureError(f"polynomial cost of degree {ncost - 1}", clineno)
        if len(c) < 4 + ncost:
            raise CaseParseError("gencost row shorter than its NCOST", clineno)
        coeffs = [0.0] * (3 - ncost) + list(c[4:4 + ncost])
        c2, c1, c0 = coeffs
        if r[7] <= 0:
            continue
        generators.append(Generator(
            bus=int(r[0]), p_min=r[9] / base, p_max=r[8] / base,
            q_min=r[4] / base, q_max=r[3] / base,
            cost_c2=c2 * base * base, cost_c1=c1 * base, cost_c0=c0,
        ))

    branches = []
    for k, (lineno, r) in enumerate(_table(tables, "branch", _BRANCH_COLS)):
        if r[10] <= 0:
            continue
        shift = r[9]
        if shift != 0.0:
            raise UnsupportedFeatureError("non-zero branch phase shift", lineno)
        res, x = r[2], r[3]
        z2 = res * res + x * x
        g, b = (res / z2, -x / z2) if z2 > 0 else (0.0, 0.0)
        tap = r[8] if r[8] != 0.0 else 1.0
        rate = r[5]
        ang_min = r[11] if len(r) > 11 else 0.0
        ang_max = r[12] if len(r) > 12 else 0.0
        branches.append(Branch(
            id=k + 1, from_bus=int(r[0]), to_bus=int(r[1]), g=g, b=b, b_charge=r[4],
            tap=tap, s_max=(rate / base if rate > 0 else None),
            theta_min=_angle_limit(ang_min, -1), theta_max=_angle_limit(ang_max, +1),
        ))

    net = Network(base, tuple(buses), tuple(generators), tuple(branches), name)
    errors = [d for d in validate(net) if d.level == "error"]
    if errors:
        raise NetworkValidationError(errors)
    return net


def _angle_limit(deg: float, side: int) -> float:
    if deg == 0.0 or abs(deg) >= 360.0:
        return side * math.inf
    return math.radians(deg)


def load_case(path, name: str | None = None) -> Network:
    from pathlib import Path

    p = Path(path)
    text = p.read_text()
    if p.suffix == ".json":
        return Network.from_json(text)
    return parse_case(text, name if name is not None else p.stem)


# ---------------------------------------------------------------------------
# validation

def validate(network: Network, default_angle: float = DEFAULT_ANGLE_LIMIT) -> list[Diagnostic]:
    """Check the network invariants; returns an empty list when all hold.

    Angle limits that are missing or at least pi/2 in magnitude are reported
    as warnings (``sanitize`` replaces them with ``+/-default_angle``).
    """
    diags: list[Diagnostic] = []
    err = lambda msg, subj="": diags.append(Diagnostic("error", msg, subj))  # noqa: E731
    ids = [b.id for b in network.buses]
    if len(set(ids)) != len(ids):
        err("duplicate bus ids")
    refs = [b.id for b in network.buses if b.is_reference]
    if len(refs) != 1:
        err(f"expected exactly one reference bus, found {len(refs)}")
    if not (math.isfinite(network.base_mva) and network.base_mva > 0):
        err("base_mva must be positive")
    for b in network.buses:
        s = f"bus {b.id}"
        if not all(map(math.isfinite, (b.p_load, b.q_load, b.g_shunt, b.b_shunt, b.v_min, b.v_max))):
            err("non-finite bus data", s)
        elif not 0 < b.v_min <= b.v_max:
            err(f"voltage limits must satisfy 0 < v_min <= v_max (got {b.v_min}, {b.v_max})", s)
    known = set(ids)
    for k, g in enumerate(network.generators):
        s = f"generator {k}"
        vals = (g.p_min, g.p_max, g.q_min, g.q_max, g.cost_c2, g.cost_c1, g.cost_c0)
        if g.bus not in known:
            err(f"unknown bus {g.bus}", s)
        if not all(map(math.isfinite, vals)):
            err("non-finite generator data", s)
            continue
        if g.cost_c2 < 0:
            err("negative quadratic cost coefficient", s)
        if g.p_min > g.p_max:
            err("p_min > p_max", s)
        if g.q_min > g.q_max:
            err("q_min > q_max", s)
    for br in network.branches:
        s = f"branch {br.id}"
        if br.from_bus not in known or br.to_bus not in known:
            err("unknown terminal bus", s)
        if br.from_bus == br.to_bus:
            err("branch connects a bus to itself", s)
        if not all(map(math.isfinite, (br.g, br.b, br.b_charge, br.tap))):
            err("non-finite branch data", s)
        if not br.tap > 0:
            err("tap ratio must be positive", s)
        if br.s_max is not None and not (math.isfinite(br.s_max) and br.s_max > 0):
            err("s_max must be positive or unlimited", s)
        if math.isnan(br.theta_min) or math.isnan(br.theta_max):
            err("NaN angle limit", s)
            continue
        if br.theta_min > br.theta_max:
            err("theta_min > theta_max", s)
        loose = [v for v in (br.theta_min, br.theta_max) if abs(v) >= math.pi / 2]
        if loose:
            diags.append(Diagnostic(
                "warning", f"angle limit clamped to +/-{default_angle:g} rad", s))
    return diags


def sanitize(network: Network, default_angle: float = DEFAULT_ANGLE_LIMIT) -> tuple[Network, list[Diagnostic]]:
    """Return a copy with loose angle limits clamped, plus the diagnostics."""
    diags = validate(network, default_angle)
    branches = []
    for br in network.branches:
        hi = br.theta_max if abs(br.theta_max) < math.pi / 2 else default_angle
        lo = br.theta_min if abs(br.theta_min) < math.pi / 2 else min(-default_angle, hi)
        hi = max(hi, lo)
        if (lo, hi) != (br.theta_min, br.theta_max):
            br = replace(br, theta_min=lo, theta_max=hi)
        branches.append(br)
    return replace(network, branches=tuple(branches)), diags
