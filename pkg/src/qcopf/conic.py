"""Conic programs over named variables.

A :class:`ConicProgram` holds linear rows, second-order cones and rotated
second-order cones whose entries are affine expressions in named variables.
:func:`solve` compiles the program to standard form and hands it to an
interior-point backend; :func:`evaluate` measures how well a point satisfies
the program without any solver involved.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

SENSES = ("<=", ">=", "==")
STATUSES = ("optimal", "infeasible", "unbounded", "numerical-failure", "iteration-limit")

DEFAULT_FEAS = 1e-8
DEFAULT_GAP = 1e-8
DEFAULT_MAX_ITERS = 200


@dataclass(frozen=True)
class LinearFacet:
    """The relation ``sum(coefficients[t] * x[t]) + constant  <sense>  0``."""

    coefficients: Mapping[str, float]
    constant: float = 0.0
    sense: str = "<="

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"unknown sense {self.sense!r}")

    def value(self, point: Mapping[str, float]) -> float:
        return sum(c * point[t] for t, c in self.coefficients.items()) + self.constant

    def slack(self, point: Mapping[str, float]) -> float:
        """Signed slack; negative means the point violates the relation."""
        v = self.value(point)
        if self.sense == "<=":
            return -v
        if self.sense == ">=":
            return v
        return -abs(v)

    def violation(self, point: Mapping[str, float]) -> float:
        return max(0.0, -self.slack(point))

    def is_trivial(self, tol: float = 0.0) -> bool:
        return all(abs(c) <= tol for c in self.coefficients.values())

    def key(self, tol: float = 1e-12) -> tuple:
        """Hashable rounding of the facet, used for deduplication."""
        scale = 1.0 / tol
        items = tuple(sorted((t, round(c * scale)) for t, c in self.coefficients.items() if c != 0.0))
        return items, round(self.constant * scale), self.sense

    def to_dict(self) -> dict:
        return {"coefficients": dict(self.coefficients), "constant": self.constant, "sense": self.sense}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearFacet":
        return cls(dict(d["coefficients"]), float(d["constant"]), d["sense"])


def facet(target: str, sense: str, terms: Mapping[str, float], constant: float = 0.0) -> LinearFacet:
    """Build ``target <sense> sum(terms) + constant`` as a :class:`LinearFacet`."""
    coefficients = {target: 1.0}
    for tag, c in terms.items():
        coefficients[tag] = coefficients.get(tag, 0.0) - c
    return LinearFacet(coefficients, -constant, sense)


def linear(terms: Mapping[str, float], sense: str, rhs: float = 0.0) -> LinearFacet:
    """Build ``sum(terms) <sense> rhs``."""
    return LinearFacet(dict(terms), -rhs, sense)


Affine = tuple  # (coefficients: Mapping[str, float], constant: float)


def _affine(entry) -> Affine:
    if isinstance(entry, str):
        return ({entry: 1.0}, 0.0)
    if isinstance(entry, (int, float)):
        return ({}, float(entry))
    coefficients, constant = entry
    return (dict(coefficients), float(constant))


def _affine_value(entry: Affine, point: Mapping[str, float]) -> float:
    coefficients, constant = entry
    return sum(c * point[t] for t, c in coefficients.items()) + constant


@dataclass(frozen=True)
class Cone:
    """Second-order cone constraint over affine entries.

    ``soc``:  entries[0] >= ||entries[1:]||
    ``rsoc``: 2 * entries[0] * entries[1] >= ||entries[2:]||**2, entries[0:2] >= 0
    """

    kind: str
    entries: tuple

    def __post_init__(self):
        if self.kind == "soc" and len(self.entries) < 2:
            raise ValueError("second-order cone needs at least 2 entries")
        if self.kind == "rsoc" and len(self.entries) < 3:
            raise ValueError("rotated cone needs at least 3 entries")
        if self.kind not in ("soc", "rsoc"):
            raise ValueError(f"unknown cone kind {self.kind!r}")

    @classmethod
    def soc(cls, *entries) -> "Cone":
        return cls("soc", tuple(_affine(e) for e in entries))

    @classmethod
    def rsoc(cls, *entries) -> "Cone":
        return cls("rsoc", tuple(_affine(e) for e in entries))

    def tags(self) -> set:
        return {t for coefficients, _ in self.entries for t in coefficients}

    def residual(self, point: Mapping[str, float]) -> float:
        """Positive when the point lies outside the cone (Euclidean form)."""
        vals = [_affine_value(e, point) for e in self.entries]
        if self.kind == "soc":
            return math.hypot(*vals[1:]) - vals[0] if len(vals) > 1 else -vals[0]
        u, v, rest = vals[0], vals[1], vals[2:]
        return math.hypot(u - v, *(math.sqrt(2.0) * r for r in rest)) - (u + v)

    def violation(self, point: Mapping[str, float]) -> float:
        return max(0.0, self.residual(point))

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "entries": [{"coefficients": dict(c), "constant": k} for c, k in self.entries]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Cone":
        return cls(d["kind"], tuple((dict(e["coefficients"]), float(e["constant"])) for e in d["entries"]))


class ConicProgram:
    """Minimize a linear objective over boxes, linear rows and cones."""

    def __init__(self):
        self.tags: list[str] = []
        self.index: dict[str, int] = {}
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.rows: list[LinearFacet] = []
        self.cones: list[Cone] = []
        self.objective: dict[str, float] = {}
        self.objective_constant = 0.0

    @property
    def num_vars(self) -> int:
        return len(self.tags)

    def add_var(self, tag: str, lo: float = -math.inf, hi: float = math.inf) -> int:
        if tag in self.index:
            raise ValueError(f"duplicate variable {tag!r}")
        if lo > hi:
            raise ValueError(f"empty box for {tag!r}: [{lo}, {hi}]")
        self.index[tag] = len(self.tags)
        self.tags.append(tag)
        self.lower.append(float(lo))
        self.upper.append(float(hi))
        return self.index[tag]

    def tighten_bounds(self, tag: str, lo: float = -math.inf, hi: float = math.inf):
        i = self.index[tag]
        self.lower[i] = max(self.lower[i], float(lo))
        self.upper[i] = min(self.upper[i], float(hi))
        if self.lower[i] > self.upper[i]:
            raise ValueError(f"empty box for {tag!r}: [{self.lower[i]}, {self.upper[i]}]")

    def _check_tags(self, tags):
        missing = [t for t in tags if t not in self.index]
        if missing:
            raise KeyError(f"unknown variables {missing}")

    def add_row(self, row: LinearFacet):
        if row.is_trivial():
            raise ValueError("linear row has no non-zero coefficient")
        self._check_tags(row.coefficients)
        self.rows.append(row)

    def add_cone(self, cone: Cone):
        self._check_tags(cone.tags())
        self.cones.append(cone)

    def set_objective(self, coefficients: Mapping[str, float], constant: float = 0.0):
        self._check_tags(coefficients)
        self.objective = dict(coefficients)
        self.objective_constant = float(constant)

    def point(self, vector: Sequence[float]) -> dict[str, float]:
        return dict(zip(self.tags, map(float, vector)))

    def vector(self, point: Mapping[str, float]) -> np.ndarray:
        return np.array([point[t] for t in self.tags], dtype=float)

    def to_dict(self) -> dict:
        def enc(x):
            return None if math.isinf(x) else x
        return {
            "tags": list(self.tags),
            "lower": [enc(x) for x in self.lower],
            "upper": [enc(x) for x in self.upper],
            "objective": dict(self.objective),
            "objective_constant": self.objective_constant,
            "rows": [r.to_dict() for r in self.rows],
            "cones": [c.to_dict() for c in self.cones],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConicProgram":
        prog = cls()
        for tag, lo, hi in zip(d["tags"], d["lower"], d["upper"]):
            prog.add_var(tag, -math.inf if lo is None else lo, math.inf if hi is None else hi)
        for r in d["rows"]:
            prog.add_row(LinearFacet.from_dict(r))
        for c in d["cones"]:
            prog.add_cone(Cone.from_dict(c))
        prog.set_objective(d["objective"], d["objective_constant"])
        return prog

    @classmethod
    def from_json(cls, text: str) -> "ConicProgram":
        return cls.from_dict(json.loads(text))


@dataclass
class Residuals:
    rows: list[float]
    cones: list[float]
    boxes: list[float]
    objective: float

    @property
    def max_row(self) -> float:
        return max(self.rows, default=0.0)

    @property
    def max_cone(self) -> float:
        return max(self.cones, default=0.0)

    @property
    def max_box(self) -> float:
        return max(self.boxes, default=0.0)

    @property
    def worst(self) -> float:
        return max(self.max_row, self.max_cone, self.max_box)


def evaluate(program: ConicProgram, point) -> Residuals:
    """Violation of every row, cone and variable box at ``point``.

    ``point`` may be a vector of length ``num_vars`` or a tag mapping.
    """
    if not isinstance(point, Mapping):
        if len(point) != program.num_vars:
            raise ValueError(f"point has length {len(point)}, expected {program.num_vars}")
        point = program.point(point)
    rows = [r.violation(point) for r in program.rows]
    cones = [c.violation(point) for c in program.cones]
    boxes = [max(0.0, lo - point[t], point[t] - hi)
             for t, lo, hi in zip(program.tags, program.lower, program.upper)]
    obj = sum(c * point[t] for t, c in program.objective.items()) + program.objective_constant
    return Residuals(rows, cones, boxes, obj)


@dataclass(frozen=True)
class Tolerances:
    feas: float = DEFAULT_FEAS
    gap: float = DEFAULT_GAP


@dataclass
class SolveResult:
    status: str
    primal: np.ndarray | None
    objective: float
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    gap: float = math.nan
    iterations: int = 0
    wall_time: float = 0.0
    certificate: str | None = None
    backend: str = ""
    raw_status: str = ""
    inaccurate: bool = False
    tags: tuple = field(default=(), repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, tag: str) -> float:
        if self.primal is None:
            raise ValueError(f"no primal solution (status {self.status})")
        return float(self.primal[self.tags.index(tag)])

    def values(self) -> dict[str, float]:
        if self.primal is None:
            return {}
        return dict(zip(self.tags, map(float, self.primal)))


@dataclass
class StandardForm:
    """``min q.x + offset  s.t.  b - A x in K`` with K = zero x nonneg x SOC...

    Columns are the non-fixed variables of the source program.
    """

    q: np.ndarray
    offset: float
    A: sp.csc_matrix
    b: np.ndarray
    n_zero: int
    n_nonneg: int
    soc_dims: list[int]
    columns: np.ndarray          # source index of each kept column
    fixed: dict[int, float]      # source index -> fixed value
    inconsistent: str | None = None


def compile_program(program: ConicProgram, feas: float = DEFAULT_FEAS) -> StandardForm:
    """Substitute fixed variables, turn boxes into rows and rotated cones into SOCs."""
    n = program.num_vars
    lower = np.array(program.lower, dtype=float)
    upper = np.array(program.upper, dtype=float)
    is_fixed = np.isfinite(lower) & (lower == upper)
    fixed = {int(i): float(lower[i]) for i in np.flatnonzero(is_fixed)}
    columns = np.flatnonzero(~is_fixed)
    col_of = {int(src): k for k, src in enumerate(columns)}
    tag_col = {t: col_of.get(i, -1) for t, i in program.index.items()}
    tag_src = program.index

    def reduce(coefficients: Mapping[str, float], constant: float):
        cols, vals = [], []
        for t, c in coefficients.items():
            if c == 0.0:
                continue
            k = tag_col[t]
            if k < 0:
                constant += c * fixed[tag_src[t]]
            else:
                cols.append(k)
                vals.append(c)
        return cols, vals, constant

    rows_r, rows_c, rows_v, rhs = [], [], [], []
    inconsistent = None

    def push(cols, vals, b):
        r = len(rhs)
        rows_r.extend([r] * len(cols))
        rows_c.extend(cols)
        rows_v.extend(vals)
        rhs.append(b)

    # s = b - A x; a row "a.x + c <= 0" becomes A = a, b = -c
    eqs = [r for r in program.rows if r.sense == "=="]
    ineqs = [r for r in program.rows if r.sense != "=="]
    n_zero = 0
    for row in eqs:
        cols, vals, c = reduce(row.coefficients, row.constant)
        if not cols:
            if abs(c) > feas and inconsistent is None:
                inconsistent = f"equality row reduces to {c:g} == 0 after fixing variables"
            continue
        push(cols, vals, -c)
        n_zero += 1
    n_nonneg = 0
    for row in ineqs:
        cols, vals, c = reduce(row.coefficients, row.constant)
        if row.sense == ">=":
            vals = [-v for v in vals]
            c = -c
        if not cols:
            if c > feas and inconsistent is None:
                inconsistent = f"inequality row reduces to {c:g} <= 0 after fixing variables"
            continue
        push(cols, vals, -c)
        n_nonneg += 1
    for k, src in enumerate(columns):
        if math.isfinite(upper[src]):
            push([k], [1.0], upper[src])
            n_nonneg += 1
        if math.isfinite(lower[src]):
            push([k], [-1.0], -lower[src])
            n_nonneg += 1
    soc_dims = []
    for cone in program.cones:
        entries = [reduce(*e) for e in cone.entries]
        if cone.kind == "rsoc":
            (uc, uv, uk), (vc, vv, vk) = entries[0], entries[1]
            root2 = math.sqrt(2.0)
            entries = ([(uc + vc, uv + vv, uk + vk),
                        (uc + vc, uv + [-x for x in vv], uk - vk)]
                       + [(cs, [root2 * x for x in vs], root2 * k) for cs, vs, k in entries[2:]])
        for cols, vals, c in entries:
            # s_j = a.x + c = b - A x  =>  A = -a, b = c
            push(cols, [-v for v in vals], c)
        soc_dims.append(len(entries))

    m = len(rhs)
    A = sp.csc_matrix((rows_v, (rows_r, rows_c)), shape=(m, len(columns)))
    A.sum_duplicates()
    q = np.zeros(len(columns))
    offset = program.objective_constant
    for t, c in program.objective.items():
        k = tag_col[t]
        if k < 0:
            offset += c * fixed[tag_src[t]]
        else:
            q[k] += c
    return StandardForm(q, offset, A, np.array(rhs, dtype=float), n_zero, n_nonneg,
                        soc_dims, columns, fixed, inconsistent)


def _expand(form: StandardForm, n: int, x: np.ndarray) -> np.ndarray:
    full = np.zeros(n)
    full[form.columns] = x
    for i, v in form.fixed.items():
        full[i] = v
    return full


_CLARABEL_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "iteration-limit",
    "MaxTime": "iteration-limit",
    "NumericalError": "numerical-failure",
    "InsufficientProgress": "numerical-failure",
}


def _solve_clarabel(form: StandardForm, tol: Tolerances, max_iters: int) -> dict:
    import clarabel

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iters
    settings.tol_feas = tol.feas
    settings.tol_gap_abs = tol.gap
    settings.tol_gap_rel = tol.gap
    settings.static_regularization_enable = True
    settings.static_regularization_constant = 1e-9
    settings.iterative_refinement_enable = True
    settings.iterative_refinement_max_iter = 2
    settings.max_threads = 1
    cones = []
    if form.n_zero:
        cones.append(clarabel.ZeroConeT(form.n_zero))
    if form.n_nonneg:
        cones.append(clarabel.NonnegativeConeT(form.n_nonneg))
    cones.extend(clarabel.SecondOrderConeT(d) for d in form.soc_dims)
    n = form.A.shape[1]
    P = sp.csc_matrix((n, n))
    sol = clarabel.DefaultSolver(P, form.q, form.A, form.b, cones, settings).solve()
    raw = str(sol.status).split(".")[-1]
    status = _CLARABEL_STATUS.get(raw, "numerical-failure")
    obj, dual_obj = sol.obj_val, sol.obj_val_dual
    gap = abs(obj - dual_obj) / max(1.0, abs(obj)) if math.isfinite(obj) and math.isfinite(dual_obj) else math.nan
    return dict(status=status, raw=raw, x=np.array(sol.x), obj=obj, iters=sol.iterations,
                r_prim=sol.r_prim, r_dual=sol.r_dual, gap=gap, inaccurate=raw.startswith("Almost"))


def _independent_rows(A: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    from scipy.linalg import qr

    if A.shape[0] == 0:
        return np.arange(0)
    _, R, piv = qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(1.0, diag.max(initial=0.0))))
    return np.sort(piv[:rank])


def _solve_cvxopt(form: StandardForm, tol: Tolerances, max_iters: int) -> dict:
    import cvxopt
    from cvxopt import solvers

    A = form.A.toarray()
    Aeq, beq = A[:form.n_zero], form.b[:form.n_zero]
    # conelp needs rank(A) = rows; dependent equalities are dropped
    keep = _independent_rows(Aeq)
    Aeq, beq = Aeq[keep], beq[keep]
    G, h = A[form.n_zero:], form.b[form.n_zero:]
    dims = {"l": form.n_nonneg, "q": list(form.soc_dims), "s": []}
    opts = {"show_progress": False, "maxiters": max_iters, "abstol": tol.gap,
            "reltol": tol.gap, "feastol": tol.feas}
    args = [cvxopt.matrix(form.q), cvxopt.sparse(cvxopt.matrix(G)), cvxopt.matrix(h), dims]
    if len(beq):
        args += [cvxopt.sparse(cvxopt.matrix(Aeq)), cvxopt.matrix(beq)]
    try:
        sol = solvers.conelp(*args, options=opts)
    except (ValueError, ArithmeticError) as exc:
        return dict(status="numerical-failure", raw=str(exc), x=None, obj=math.nan, iters=0,
                    r_prim=math.nan, r_dual=math.nan, gap=math.nan, inaccurate=False)
    raw = sol["status"]
    status = {"optimal": "optimal", "primal infeasible": "infeasible",
              "dual infeasible": "unbounded"}.get(raw, "numerical-failure")
    iters = sol.get("iterations", 0)
    if raw == "unknown" and iters >= max_iters:
        status = "iteration-limit"
    x = np.array(sol["x"]).ravel() if sol["x"] is not None else None
    obj = sol["primal objective"] if sol["primal objective"] is not None else math.nan
    return dict(status=status, raw=raw, x=x, obj=obj, iters=iters,
                r_prim=sol.get("primal infeasibility") or math.nan,
                r_dual=sol.get("dual infeasibility") or math.nan,
                gap=sol.get("relative gap") or math.nan, inaccurate=False)


BACKENDS: dict[str, Callable[[StandardForm, Tolerances, int], dict]] = {
    "clarabel": _solve_clarabel,
    "cvxopt": _solve_cvxopt,
}
DEFAULT_BACKEND = "clarabel"


def register_backend(name: str, fn: Callable[[StandardForm, Tolerances, int], dict]):
    """Plug in an external solver; ``fn`` must return the same dict as the built-ins."""
    BACKENDS[name] = fn


def solve(program: ConicProgram, tolerances: Tolerances | None = None,
          max_iters: int = DEFAULT_MAX_ITERS, backend: str = DEFAULT_BACKEND) -> SolveResult:
    tol = tolerances or Tolerances()
    t0 = time.perf_counter()
    form = compile_program(program, tol.feas)
    tags = tuple(program.tags)
    if form.inconsistent:
        return SolveResult("infeasible", None, math.nan, certificate=form.inconsistent,
                           backend="presolve", raw_status="presolve", tags=tags,
                           wall_time=time.perf_counter() - t0)
    out = BACKENDS[backend](form, tol, max_iters)
    status = out["status"]
    certificate = None
    if status == "infeasible":
        certificate = f"{backend} reported primal infeasibility ({out['raw']})"
    elif status == "unbounded":
        certificate = f"{backend} reported dual infeasibility ({out['raw']})"
    primal = None
    objective = math.nan
    if status == "optimal":
        primal = _expand(form, program.num_vars, out["x"])
        objective = float(out["obj"]) + form.offset
    return SolveResult(status, primal, objective, out["r_prim"], out["r_dual"], out["gap"],
                       int(out["iters"]), time.perf_counter() - t0, certificate, backend,
                       out["raw"], out["inaccurate"], tags)
