import csv
import io
import json
import subprocess
import sys

import pytest

from conftest import DATA
from qcopf import cli
from qcopf.cli import (EXIT_INFEASIBLE, EXIT_OK, EXIT_PARSE, EXIT_PARTIAL, EXIT_SOLVER, EXIT_USAGE,
                       LONG_COLUMNS, UndefinedGapError, gap, main, run_case, variant_name)
from qcopf.qcmodel import QcModel, check_ac_point
from qcopf.testkit import RandomNetworkSpec, gen_feasible_point, gen_network

TOY3 = DATA / "toy3.m"


def write_generated(tmp_path, seed, n=2, topology="path"):
    """Generated case as JSON plus the cost of a point known to be AC feasible."""
    net, pt = gen_feasible_point(gen_network(RandomNetworkSpec(n_buses=n, topology=topology, seed=seed)), seed)
    path = tmp_path / f"gen{seed}.json"
    path.write_text(net.to_json())
    return path, check_ac_point(net, pt).objective


def run_json(capsys, argv):
    code = main(argv)
    return code, json.loads(capsys.readouterr().out)


# gap arithmetic

def test_gap_examples():
    assert gap(110.0, 100.0) == pytest.approx(10.0)
    assert gap(100.0, 100.0) == 0.0
    # inverting a reported 15.50% gap at local 17551.89
    implied = 17551.89 / 1.155
    assert implied == pytest.approx(15196.4, abs=0.05)
    assert gap(17551.89, implied) == pytest.approx(15.50)


def test_gap_undefined():
    with pytest.raises(UndefinedGapError):
        gap(10.0, 0.0)
    with pytest.raises(UndefinedGapError):
        gap(10.0, -1.0)
    with pytest.raises(ValueError):
        gap(10.0, 1.0, denominator="mean")


def test_gap_local_denominator():
    assert gap(110.0, 100.0, "local") == pytest.approx(100 * 10 / 110)


def test_variant_names():
    assert variant_name(True, True, True) == "all"
    assert variant_name(False, False, False) == "no_bt_mf_vdiff"
    assert variant_name(True, False, False) == "no_bt_vdiff"


# single runs

def test_run_without_ac_objective(capsys):
    code, rep = run_json(capsys, ["run", str(TOY3), "--no-timings"])
    assert code == EXIT_OK
    assert rep["status"] == "optimal" and rep["qc_bound"] > 0
    assert rep["gap_percent"] is None
    assert rep["obbt"]["status"] == "converged"
    assert "bt_time" not in rep


def test_run_with_ac_objective(capsys):
    code, rep = run_json(capsys, ["run", str(TOY3), "--ac-objective", "1600"])
    assert code == EXIT_OK
    assert rep["gap_percent"] == pytest.approx(gap(1600.0, rep["qc_bound"]))
    assert rep["bt_time"] > 0 and rep["qc_time"] > 0


def test_toy_case_gap_nonnegative(tmp_path, capsys):
    path, cost = write_generated(tmp_path, 4)
    code, rep = run_json(capsys, ["run", str(path), "--no-bt", "--no-mf", "--no-vdiff",
                                  "--ac-objective", repr(cost)])
    assert code == EXIT_OK
    assert rep["variant"] == "no_bt_mf_vdiff" and rep["obbt"] is None
    assert rep["gap_percent"] >= -1e-6


def test_csv_run(capsys):
    assert main(["run", str(TOY3), "--format", "csv", "--no-bt"]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert tuple(rows[0]) == LONG_COLUMNS and len(rows) == 2


def test_parse_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.m"
    bad.write_text("mpc.bus = [1 3 0;\n")
    assert main(["run", str(bad)]) == EXIT_PARSE
    assert main(["run", str(tmp_path / "missing.m")]) == EXIT_PARSE
    assert "qcopf:" in capsys.readouterr().err


def test_usage_error_exit():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == EXIT_USAGE


def overloaded(tmp_path):
    text = TOY3.read_text().replace("3\t1\t90\t30", "3\t1\t900\t30")
    path = tmp_path / "overloaded.m"
    path.write_text(text)
    return path


@pytest.mark.parametrize("extra", [[], ["--no-bt"]])
def test_infeasible_exit(tmp_path, capsys, extra):
    code, rep = run_json(capsys, ["run", str(overloaded(tmp_path)), *extra])
    assert code == EXIT_INFEASIBLE
    assert rep["status"] == "infeasible" and rep["qc_bound"] is None


def test_solver_failure_exit(monkeypatch):
    original = QcModel.solve
    monkeypatch.setattr(QcModel, "solve", lambda self, tol=None: original(self, tol, max_iters=1))
    rep = run_case(TOY3, use_bt=False)
    assert rep.exit_code == EXIT_SOLVER
    assert rep.status == "iteration-limit" and rep.gap_percent is None


def test_env_tolerance(monkeypatch, capsys):
    monkeypatch.setenv(cli.TOL_ENV, "1e-10")
    code, tight = run_json(capsys, ["run", str(TOY3), "--no-bt"])
    monkeypatch.setenv(cli.TOL_ENV, "1e-5")
    _, loose = run_json(capsys, ["run", str(TOY3), "--no-bt"])
    assert code == EXIT_OK
    assert tight["qc_bound"] == pytest.approx(loose["qc_bound"], rel=1e-3)
    monkeypatch.setenv(cli.TOL_ENV, "-1")
    assert main(["run", str(TOY3)]) == EXIT_USAGE


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "qcopf", "run", str(TOY3), "--no-bt", "--no-timings"],
                         capture_output=True, text=True, check=False)
    assert out.returncode == 0
    assert json.loads(out.stdout)["status"] == "optimal"


# batch

@pytest.fixture
def manifest(tmp_path):
    cases = [{"case": str(TOY3), "ac_objective": 1600.0}]
    for seed in (1, 4):
        path, cost = write_generated(tmp_path, seed, n=3, topology="ring")
        cases.append({"case": path.name, "ac_objective": cost})
    variants = ["all", "no_mf", "no_vdiff", "no_bt_mf_vdiff"]
    for c in cases:
        c["variants"] = variants
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(cases))
    return path


def test_batch_rows(manifest, capsys):
    code, out = run_json(capsys, ["batch", str(manifest)])
    assert code == EXIT_OK
    assert len(out["rows"]) == 12
    assert all(r["status"] == "optimal" and r["gap_percent"] >= -1e-6 for r in out["rows"])


def test_batch_wide_csv(manifest, capsys):
    assert main(["batch", str(manifest), "--format", "csv", "--layout", "wide"]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 3
    header = list(rows[0])
    gaps = [i for i, c in enumerate(header) if c.startswith("gap_")]
    times = [i for i, c in enumerate(header) if c.endswith("_time") or "_time_" in c]
    assert max(gaps) < min(times)
    assert rows[0]["gap_all"] and rows[0]["gap_no_bt"] == ""


def test_batch_missing_case_is_partial(manifest, tmp_path, capsys):
    entries = json.loads(manifest.read_text())
    entries.append({"case": "nowhere.m", "ac_objective": 1.0, "variants": ["all"]})
    manifest.write_text(json.dumps(entries))
    code, out = run_json(capsys, ["batch", str(manifest), "--jobs", "3"])
    assert code == EXIT_PARTIAL
    assert len(out["rows"]) == 13
    bad = [r for r in out["rows"] if r["error"]]
    assert len(bad) == 1 and bad[0]["status"] == "error"


def test_empty_manifest(tmp_path, capsys):
    path = tmp_path / "empty.json"
    path.write_text("[]")
    code, out = run_json(capsys, ["batch", str(path)])
    assert code == EXIT_OK and out["rows"] == []
    assert main(["batch", str(path), "--format", "csv"]) == EXIT_OK
    assert capsys.readouterr().out.strip().split(",")[0] == "case"


def test_bad_manifest(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps([{"case": str(TOY3), "variants": ["everything"]}]))
    assert main(["batch", str(path)]) == EXIT_PARSE


def test_batch_byte_deterministic(manifest, tmp_path):
    outs = []
    for k in range(2):
        target = tmp_path / f"out{k}.csv"
        assert main(["batch", str(manifest), "--format", "csv", "--no-timings", "-o", str(target)]) == EXIT_OK
        outs.append(target.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("seed", range(8))
def test_gap_antitone_in_tightenings(tmp_path, monkeypatch, seed):
    # gap noise is solver noise times local/bound, which reaches ~260 here
    monkeypatch.setenv(cli.TOL_ENV, "1e-10")
    path, cost = write_generated(tmp_path, seed, n=4, topology="tree")
    g = {(mf, vd): run_case(path, use_mf=mf, use_vdiff=vd, use_bt=False, ac_objective=cost).gap_percent
         for mf in (True, False) for vd in (True, False)}
    assert g[True, True] <= g[False, True] + 1e-4
    assert g[True, True] <= g[True, False] + 1e-4
    assert g[True, True] <= g[False, False] + 1e-4


def test_negative_bound_has_no_gap(tmp_path):
    path, cost = write_generated(tmp_path, 2, n=3, topology="ring")
    rep = run_case(path, use_bt=False, ac_objective=cost)
    assert rep.exit_code == EXIT_OK and rep.qc_bound < 0
    assert rep.gap_percent is None
