"""Optimization-based bound tightening of V, angle-difference and V-difference boxes.

Each subproblem minimizes or maximizes one quantity over the QC relaxation
built from the current bounds: ``w[i]`` (giving V_i through a square root),
``theta_f - theta_t`` of a branch, and ``vd[k]`` when the variant carries the
voltage-difference constraints. Sweeps repeat until no bound moves by more
than ``tol`` or ``max_sweeps`` is reached.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import conic
from .envelopes import Interval
from .netdata import Network
from .qcmodel import DTH, V, VARIANTS, VD, W, BoundSet, QcVariant, build, vdiff_range

# Outward padding applied to every solver-derived bound so that solver
# tolerance never cuts off a feasible point.
SAFETY_MARGIN = 1e-7


@dataclass(frozen=True)
class ObbtConfig:
    tol: float = 1e-4
    max_sweeps: int = 10
    variant: QcVariant = VARIANTS["all"]
    parallel: bool = False
    cutoff: float | None = None
    margin: float = SAFETY_MARGIN
    workers: int | None = None
    tolerances: conic.Tolerances | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


@dataclass(frozen=True)
class TraceEntry:
    sweep: int
    tag: str          # V[i], dtheta[k] or vd[k]
    sense: str
    old: Interval
    new: Interval
    status: str

    def to_dict(self) -> dict:
        return {"sweep": self.sweep, "tag": self.tag, "sense": self.sense,
                "old": [self.old.lo, self.old.hi], "new": [self.new.lo, self.new.hi],
                "status": self.status}


@dataclass
class ObbtTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    sweeps: int = 0
    subproblems: int = 0
    wall_time: float = 0.0
    status: str = "converged"     # converged | max_sweeps | infeasible
    improvements: list[float] = field(default_factory=list)

    @property
    def infeasible(self) -> bool:
        return self.status == "infeasible"

    def failures(self) -> list[TraceEntry]:
        return [e for e in self.entries if e.status not in ("optimal", "infeasible")]

    def to_dict(self, timings: bool = True) -> dict:
        d = {"status": self.status, "sweeps": self.sweeps, "subproblems": self.subproblems,
             "improvements": self.improvements, "entries": [e.to_dict() for e in self.entries]}
        if timings:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, timings: bool = True, **kw) -> str:
        return json.dumps(self.to_dict(timings), **kw)

    def summary(self, timings: bool = True) -> dict:
        d = {"status": self.status, "sweeps": self.sweeps, "subproblems": self.subproblems,
             "failed_subproblems": len(self.failures())}
        if timings:
            d["wall_time"] = self.wall_time
        return d


@dataclass(frozen=True)
class Candidate:
    status: str
    value: float | None


def subproblem(network: Network, bounds: BoundSet, variant: QcVariant, target: str, sense: str,
               tolerances: conic.Tolerances | None = None) -> Candidate:
    """Optimize ``target`` over the relaxation; ``value`` is in the solver's units (w, rad, p.u.)."""
    model = build(network, bounds, variant.with_objective(sense, target))
    res = model.solve(tolerances)
    if res.status != "optimal":
        return Candidate(res.status, None)
    value = res.objective if sense == "min" else -res.objective
    return Candidate("optimal", value)


def _targets(network: Network, variant: QcVariant) -> list[tuple[str, str, int]]:
    """(solver tag, family, key) in sweep order."""
    out = [(W(b.id), "v", b.id) for b in sorted(network.buses, key=lambda b: b.id)]
    branches = sorted(network.branches, key=lambda br: br.id)
    out += [(DTH(br.id), "theta", br.id) for br in branches]
    if variant.use_vdiff:
        out += [(VD(br.id), "vdiff", br.id) for br in branches]
    return out


def _report_tag(family: str, key: int) -> str:
    return {"v": V, "theta": DTH, "vdiff": VD}[family](key)


def _natural(family: str, sense: str, value: float, margin: float) -> float:
    """Turn an optimal objective into a padded bound on the natural variable."""
    if family == "v":
        if sense == "max":
            return math.sqrt(max(value, 0.0) + margin)
        return math.sqrt(max(value - margin, 0.0))
    return value + margin if sense == "max" else value - margin


def _shrink(old: Interval, sense: str, candidate: float) -> Interval:
    """Move one end of ``old`` inwards; a candidate past the other end collapses onto it."""
    if sense == "max":
        hi = min(old.hi, candidate)
        return Interval(old.lo, old.lo) if hi < old.lo else Interval(old.lo, hi)
    lo = max(old.lo, candidate)
    return Interval(old.hi, old.hi) if lo > old.hi else Interval(lo, old.hi)


def _clip_inside(old: Interval, new: Interval) -> Interval:
    """Intersect, collapsing onto the nearer end of ``old`` if rounding empties it."""
    lo, hi = max(old.lo, new.lo), min(old.hi, new.hi)
    if lo > hi:
        mid = min(max(0.5 * (lo + hi), old.lo), old.hi)
        return Interval(mid, mid)
    return Interval(lo, hi)


class _State:
    def __init__(self, network: Network, bounds: BoundSet):
        self.network = network
        self.v = dict(bounds.v)
        self.theta = dict(bounds.theta)
        self.vdiff = dict(bounds.vdiff)

    def bounds(self) -> BoundSet:
        return BoundSet(dict(self.v), dict(self.theta), dict(self.vdiff))

    def family(self, name: str) -> dict:
        return getattr(self, name)

    def apply(self, family: str, key: int, sense: str, candidate: float) -> tuple[Interval, Interval, float]:
        table = self.family(family)
        old = table[key]
        new = _shrink(old, sense, candidate)
        if family == "v" and new.lo <= 0.0:
            new = old
        table[key] = new
        if family == "v":
            self._refresh_vdiff(key)
        moved = (new.lo - old.lo) + (old.hi - new.hi)
        return old, new, moved

    def _refresh_vdiff(self, bus: int):
        for br in self.network.branches:
            if bus in (br.from_bus, br.to_bus):
                outer = vdiff_range(self.v[br.from_bus], self.v[br.to_bus])
                self.vdiff[br.id] = _clip_inside(outer, self.vdiff[br.id])


def tighten(network: Network, initial: BoundSet | None = None,
            config: ObbtConfig = ObbtConfig()) -> tuple[BoundSet, ObbtTrace]:
    """Run bound-tightening sweeps; the result is contained in ``initial``.

    If any subproblem is infeasible the relaxation, and therefore the OPF
    instance, is infeasible: the trace status becomes ``"infeasible"`` and the
    bounds reached so far are returned.
    """
    start = time.perf_counter()
    initial = initial if initial is not None else BoundSet.initial(network)
    initial.check(network)
    variant = config.variant
    if config.cutoff is not None:
        variant = QcVariant(variant.use_mf, variant.use_vdiff, cutoff=config.cutoff,
                            keep_nested=variant.keep_nested)
    state = _State(network, initial)
    trace = ObbtTrace()
    targets = _targets(network, variant)

    for sweep in range(1, config.max_sweeps + 1):
        trace.sweeps = sweep
        if config.parallel:
            best = _parallel_sweep(network, state, variant, targets, config, trace, sweep)
        else:
            best = _sequential_sweep(network, state, variant, targets, config, trace, sweep)
        trace.improvements.append(best)
        if trace.infeasible:
            break
        if best < config.tol:
            trace.status = "converged"
            break
    else:
        trace.status = "max_sweeps"
    trace.wall_time = time.perf_counter() - start
    return state.bounds(), trace


def _sequential_sweep(network, state, variant, targets, config, trace, sweep) -> float:
    best = 0.0
    for tag, family, key in targets:
        for sense in ("min", "max"):
            cand = subproblem(network, state.bounds(), variant, tag, sense, config.tolerances)
            trace.subproblems += 1
            old = state.family(family)[key]
            if cand.status == "infeasible":
                trace.entries.append(TraceEntry(sweep, _report_tag(family, key), sense, old, old, cand.status))
                trace.status = "infeasible"
                return best
            if cand.status != "optimal":
                trace.entries.append(TraceEntry(sweep, _report_tag(family, key), sense, old, old, cand.status))
                continue
            old, new, moved = state.apply(family, key, sense, _natural(family, sense, cand.value, config.margin))
            best = max(best, moved)
            trace.entries.append(TraceEntry(sweep, _report_tag(family, key), sense, old, new, cand.status))
    return best


def _parallel_sweep(network, state, variant, targets, config, trace, sweep) -> float:
    snapshot = state.bounds()
    jobs = [(tag, family, key, sense) for tag, family, key in targets for sense in ("min", "max")]

    def run(job):
        tag, _, _, sense = job
        return subproblem(network, snapshot, variant, tag, sense, config.tolerances)

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(run, jobs))
    trace.subproblems += len(jobs)
    best = 0.0
    for (tag, family, key, sense), cand in zip(jobs, results):
        old = state.family(family)[key]
        if cand.status != "optimal":
            trace.entries.append(TraceEntry(sweep, _report_tag(family, key), sense, old, old, cand.status))
            if cand.status == "infeasible":
                trace.status = "infeasible"
            continue
        old, new, moved = state.apply(family, key, sense, _natural(family, sense, cand.value, config.margin))
        best = max(best, moved)
        trace.entries.append(TraceEntry(sweep, _report_tag(family, key), sense, old, new, cand.status))
    return best
