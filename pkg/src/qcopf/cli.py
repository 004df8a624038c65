"""Command-line front end: ``qcopf run`` for one case, ``qcopf batch`` for a manifest.

Exit codes
    0  success (optimal relaxation; for batch, every row succeeded)
    2  usage error (argparse)
    3  case file could not be read, parsed or validated
    4  the relaxation (hence the OPF instance) is infeasible
    5  solver failure (numerical trouble or iteration limit)
    6  batch finished but at least one row failed
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import conic
from .netdata import CaseParseError, NetworkValidationError, load_case, sanitize
from .obbt import ObbtConfig, tighten
from .qcmodel import BoundSet, QcBuildError, QcVariant, build

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_PARTIAL = 0, 2, 3, 4, 5, 6
TOL_ENV = "QCOPF_SOLVER_TOL"

# name -> (use_mf, use_vdiff, use_bt); order fixes the wide-table columns
VARIANT_FLAGS = {
    "all": (True, True, True),
    "no_mf": (False, True, True),
    "no_vdiff": (True, False, True),
    "no_mf_vdiff": (False, False, True),
    "no_bt": (True, True, False),
    "no_bt_mf_vdiff": (False, False, False),
}

LONG_COLUMNS = ("case", "variant", "ac_objective", "gap_percent", "qc_bound", "status",
                "bt_time", "qc_time", "sweeps", "subproblems", "error")


class UndefinedGapError(ValueError):
    pass


def gap(local: float, bound: float, denominator: str = "bound") -> float:
    """Optimality gap in percent, ``100 * (local - bound) / bound``.

    ``denominator="local"`` divides by the local objective instead.
    """
    if denominator not in ("bound", "local"):
        raise ValueError("denominator must be 'bound' or 'local'")
    if bound <= 0:
        raise UndefinedGapError(f"gap is undefined for a non-positive bound ({bound})")
    return 100.0 * (local - bound) / (bound if denominator == "bound" else local)


def variant_name(use_mf: bool, use_vdiff: bool, use_bt: bool) -> str:
    for name, flags in VARIANT_FLAGS.items():
        if flags == (use_mf, use_vdiff, use_bt):
            return name
    parts = [n for n, on in (("bt", use_bt), ("mf", use_mf), ("vdiff", use_vdiff)) if not on]
    return "no_" + "_".join(parts)


@dataclass
class RunReport:
    case: str
    variant: str
    use_mf: bool
    use_vdiff: bool
    use_bt: bool
    status: str
    ac_objective: float | None = None
    qc_bound: float | None = None
    gap_percent: float | None = None
    gap_denominator: str = "bound"
    bt_time: float = 0.0
    qc_time: float = 0.0
    obbt: dict | None = None
    solver: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    error: str | None = None
    exit_code: int = EXIT_OK

    def to_dict(self, timings: bool = True) -> dict:
        d = {
            "case": self.case, "variant": self.variant,
            "flags": {"mf": self.use_mf, "vdiff": self.use_vdiff, "bt": self.use_bt},
            "status": self.status, "ac_objective": self.ac_objective, "qc_bound": self.qc_bound,
            "gap_percent": self.gap_percent, "gap_denominator": self.gap_denominator,
            "obbt": self.obbt, "solver": self.solver, "warnings": self.warnings, "error": self.error,
        }
        if timings:
            d["bt_time"] = self.bt_time
            d["qc_time"] = self.qc_time
        return d

    def row(self, timings: bool = True) -> dict:
        return {
            "case": self.case, "variant": self.variant, "ac_objective": self.ac_objective,
            "gap_percent": self.gap_percent, "qc_bound": self.qc_bound, "status": self.status,
            "bt_time": self.bt_time if timings else None, "qc_time": self.qc_time if timings else None,
            "sweeps": (self.obbt or {}).get("sweeps"), "subproblems": (self.obbt or {}).get("subproblems"),
            "error": self.error,
        }


def solver_tolerances() -> conic.Tolerances | None:
    raw = os.environ.get(TOL_ENV)
    if not raw:
        return None
    tol = float(raw)
    if not tol > 0:
        raise ValueError(f"{TOL_ENV} must be positive")
    return conic.Tolerances(feas=tol, gap=tol)


def run_case(path, *, use_mf=True, use_vdiff=True, use_bt=True, ac_objective=None, tol=1e-4,
             max_sweeps=10, parallel=False, gap_denominator="bound", name=None,
             timings: bool = True) -> RunReport:
    """Parse, tighten, solve and score one case. Never raises for data problems."""
    label = variant_name(use_mf, use_vdiff, use_bt)
    report = RunReport(case=name or Path(path).stem, variant=label, use_mf=use_mf,
                       use_vdiff=use_vdiff, use_bt=use_bt, status="error",
                       ac_objective=ac_objective, gap_denominator=gap_denominator)
    try:
        network, diags = sanitize(load_case(path))
    except (OSError, CaseParseError, NetworkValidationError) as exc:
        report.error, report.exit_code = str(exc), EXIT_PARSE
        return report
    report.warnings = [d.message for d in diags if d.level == "warning"]
    if not name and network.name:
        report.case = network.name
    variant = QcVariant(use_mf, use_vdiff)
    tolerances = solver_tolerances()
    try:
        bounds = BoundSet.initial(network)
        if use_bt:
            cfg = ObbtConfig(tol=tol, max_sweeps=max_sweeps, variant=variant, parallel=parallel,
                             tolerances=tolerances)
            bounds, trace = tighten(network, bounds, cfg)
            report.bt_time = trace.wall_time
            report.obbt = trace.summary(timings=False)
            if trace.infeasible:
                report.status, report.exit_code = "infeasible", EXIT_INFEASIBLE
                return report
        start = time.perf_counter()
        model = build(network, bounds, variant)
        res = model.solve(tolerances)
        report.qc_time = time.perf_counter() - start
    except QcBuildError as exc:
        report.error, report.exit_code = str(exc), EXIT_PARSE
        return report
    report.solver = {"backend": res.backend, "status": res.status, "iterations": res.iterations,
                     "inaccurate": res.inaccurate}
    report.status = res.status
    if res.status == "infeasible":
        report.exit_code = EXIT_INFEASIBLE
        return report
    if res.status != "optimal":
        report.exit_code = EXIT_SOLVER
        return report
    report.qc_bound = res.objective
    if ac_objective is not None and res.objective > 0:
        report.gap_percent = gap(ac_objective, res.objective, gap_denominator)
    return report


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows: list[dict], columns, out):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in columns])


def wide_table(reports: list[RunReport], timings: bool = True) -> tuple[list[str], list[dict]]:
    """Pivot to one row per case: all gap columns first, then BT/QC times."""
    names = list(VARIANT_FLAGS)
    cols = ["case", "ac_objective"] + [f"gap_{n}" for n in names]
    if timings:
        for n in names:
            if VARIANT_FLAGS[n][2]:
                cols.append(f"bt_time_{n}")
            cols.append(f"qc_time_{n}")
    rows: dict[str, dict] = {}
    for r in reports:
        row = rows.setdefault(r.case, {"case": r.case, "ac_objective": r.ac_objective})
        row[f"gap_{r.variant}"] = r.gap_percent
        if timings:
            row[f"bt_time_{r.variant}"] = r.bt_time if r.use_bt else None
            row[f"qc_time_{r.variant}"] = r.qc_time
    return cols, list(rows.values())


def load_manifest(path) -> list[dict]:
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ValueError("manifest must be a JSON list")
    out = []
    for e in entries:
        case = Path(e["case"])
        if not case.is_absolute():
            case = path.parent / case
        variants = e.get("variants", list(VARIANT_FLAGS))
        unknown = [v for v in variants if v not in VARIANT_FLAGS]
        if unknown:
            raise ValueError(f"unknown variants {unknown}")
        out.append({"case": case, "name": e.get("name"), "ac_objective": e.get("ac_objective"),
                    "variants": variants})
    return out


def batch(manifest_path, *, tol=1e-4, max_sweeps=10, gap_denominator="bound", jobs=1,
          parallel=False, timings: bool = True) -> list[RunReport]:
    entries = load_manifest(manifest_path)
    tasks = [(e, v) for e in entries for v in e["variants"]]

    def one(task):
        e, v = task
        mf, vd, bt = VARIANT_FLAGS[v]
        name = e["name"] or e["case"].stem
        return run_case(e["case"], use_mf=mf, use_vdiff=vd, use_bt=bt, ac_objective=e["ac_objective"],
                        tol=tol, max_sweeps=max_sweeps, parallel=parallel,
                        gap_denominator=gap_denominator, name=name, timings=timings)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, tasks))
    return [one(t) for t in tasks]


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--tol", type=float, default=1e-4, help="OBBT improvement tolerance")
    common.add_argument("--max-sweeps", type=int, default=10)
    common.add_argument("--seed", type=int, default=0,
                        help="recorded for provenance; the pipeline itself is deterministic")
    common.add_argument("--gap-denominator", choices=("bound", "local"), default="bound")
    common.add_argument("--parallel", action="store_true", help="parallel OBBT sweeps")
    common.add_argument("--no-timings", action="store_true", help="omit timings (byte-stable output)")
    common.add_argument("-o", "--output", help="write the report here instead of stdout")

    p = argparse.ArgumentParser(prog="qcopf", description="QC relaxation bounds for AC optimal power flow")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one case")
    r.add_argument("case")
    r.add_argument("--no-mf", action="store_true")
    r.add_argument("--no-vdiff", action="store_true")
    r.add_argument("--no-bt", action="store_true")
    r.add_argument("--ac-objective", type=float)
    b = sub.add_parser("batch", parents=[common], help="run a manifest of cases and variants")
    b.add_argument("manifest")
    b.add_argument("--layout", choices=("long", "wide"), default="long")
    b.add_argument("--jobs", type=int, default=1)
    return p


def _emit(text: str, output):
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    timings = not args.no_timings
    try:
        solver_tolerances()
    except ValueError as exc:
        print(f"qcopf: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "run":
        rep = run_case(args.case, use_mf=not args.no_mf, use_vdiff=not args.no_vdiff,
                       use_bt=not args.no_bt, ac_objective=args.ac_objective, tol=args.tol,
                       max_sweeps=args.max_sweeps, parallel=args.parallel,
                       gap_denominator=args.gap_denominator, timings=timings)
        if args.format == "json":
            d = rep.to_dict(timings)
            d["seed"] = args.seed
            text = json.dumps(d, indent=2, sort_keys=True) + "\n"
        else:
            buf = io.StringIO()
            write_csv([rep.row(timings)], LONG_COLUMNS, buf)
            text = buf.getvalue()
        _emit(text, args.output)
        if rep.error:
            print(f"qcopf: {rep.error}", file=sys.stderr)
        return rep.exit_code

    try:
        reports = batch(args.manifest, tol=args.tol, max_sweeps=args.max_sweeps,
                        gap_denominator=args.gap_denominator, jobs=args.jobs,
                        parallel=args.parallel, timings=timings)
    except (OSError, ValueError, KeyError) as exc:
        print(f"qcopf: bad manifest: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.layout == "wide":
        cols, rows = wide_table(reports, timings)
    else:
        cols, rows = list(LONG_COLUMNS), [r.row(timings) for r in reports]
        if not timings:
            cols = [c for c in cols if c not in ("bt_time", "qc_time")]
    if args.format == "json":
        payload = [{c: r.get(c) for c in cols} for r in rows] if args.layout == "wide" \
            else [r.to_dict(timings) for r in reports]
        text = json.dumps({"seed": args.seed, "rows": payload}, indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        write_csv(rows, cols, buf)
        text = buf.getvalue()
    _emit(text, args.output)
    failed = [r for r in reports if r.exit_code != EXIT_OK]
    return EXIT_PARTIAL if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
