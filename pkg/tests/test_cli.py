import csv
import json

import numpy as np
import pytest

from ee_testkit import cli
from ee_testkit.montecarlo import CSV_COLUMNS, ScenarioConfig, generate_dataset

from oracles import ols, restricted_ols


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_data(path, y, X, names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in np.column_stack([y, X]):
            w.writerow([repr(float(v)) for v in row])


@pytest.fixture
def linear_csv(tmp_path):
    rng = np.random.default_rng(4)
    n = 60
    X = rng.standard_normal((n, 2))
    y = 0.5 + X @ np.array([1.0, 0.8]) + rng.standard_normal(n)
    path = tmp_path / "linear.csv"
    write_data(path, y, X, ["y", "x1", "x2"])
    return path, y, np.column_stack([np.ones(n), X])


def test_linear_restriction_matches_closed_form(linear_csv, tmp_path):
    path, y, X = linear_csv
    out = tmp_path / "res.csv"
    code = cli.main(["test", str(path), "--model", "linear", "--add-intercept",
                     "--restriction", "linear", "--R", "0,1,-1", "--r", "0",
                     "--out", str(out), "-q"])
    assert code == 0
    rows = {r["stat"]: r for r in read_rows(out)}
    assert list(rows) == [f"BF{v}" for v in range(1, 8)] + ["W", "LM", "D"]
    R, r = np.array([[0.0, 1.0, -1.0]]), np.array([0.0])
    bu, br = ols(X, y), restricted_ols(X, y, R, r)
    ssr_u, ssr_r = np.sum((y - X @ bu) ** 2), np.sum((y - X @ br) ** 2)
    f = (ssr_r - ssr_u) / (ssr_u / (len(y) - 3))
    assert float(rows["BF7"]["value"]) == pytest.approx(f, rel=1e-8)
    assert float(rows["D"]["value"]) == pytest.approx(f, rel=1e-8)
    assert all(row["df"] == "1" for row in rows.values())


def test_nonlinear_model_reports_ten_statistics(tmp_path, capsys):
    ds = generate_dataset(ScenarioConfig(n=80, replications=1, master_seed=2), 0)
    path = tmp_path / "exp.csv"
    write_data(path, ds.response, ds.regressors, ["y", "x2", "x3"])
    assert cli.main(["test", str(path), "--model", "linear2-exp3", "--restriction", "h0b"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 11
    assert lines[0].split()[:4] == ["stat", "value", "df", "pvalue"]
    for line in lines[1:]:
        p = float(line.split()[3])
        assert 0.0 <= p <= 1.0


def test_sandwich_mode_drops_simplified_variants(linear_csv, capsys):
    path, _, _ = linear_csv
    code = cli.main(["test", str(path), "--model", "linear", "--add-intercept",
                     "--restriction", "linear", "--R", "0,1,0", "--covariance", "sandwich"])
    assert code == 0
    names = [ln.split()[0] for ln in capsys.readouterr().out.strip().splitlines()[1:]]
    assert names == ["BF1", "BF2", "BF3", "W", "LM", "D"]


def test_empty_csv_is_input_error(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    path.write_text("")
    code = cli.main(["test", str(path), "--model", "linear", "--restriction", "linear",
                     "--R", "1"])
    assert code == 1
    assert "empty.csv" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["test", "DATA", "--restriction", "h0b"],
    ["test", "DATA", "--model", "linear"],
    ["test", "DATA", "--model", "linear", "--restriction", "linear"],
    ["test", "DATA", "--model", "nosuch", "--restriction", "h0b"],
    ["size", "--reps", "0"],
    ["size", "--scenario", "V"],
    ["size", "--set", "colour=1"],
    ["size", "--stat", "BF9"],
    ["power", "--delta-grid", "a,b"],
    ["validate", "--suite", "nosuch"],
])
def test_input_errors_exit_1(argv, linear_csv):
    argv = [str(linear_csv[0]) if a == "DATA" else a for a in argv]
    try:
        code = cli.main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"reps": 2, "replicates": 3}))
    assert cli.main(["size", "--config", str(cfg)]) == 1
    assert "replicates" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"reps": 3, "n": 25, "scenario": "II", "stat": ["LM"]}))
    out = tmp_path / "o.csv"
    assert cli.main(["size", "--config", str(cfg), "--set", "n=30", "--reps", "2",
                     "--out", str(out)]) == 0
    rows = read_rows(out)
    assert {r["n"] for r in rows} == {"30"}
    assert {r["reps"] for r in rows} == {"2"}
    assert {r["scenario"] for r in rows} == {"II"}
    assert [(r["stat"], r["hyp"]) for r in rows] == [("LM", "h0a"), ("LM", "h0b")]


def test_size_single_replication_is_repeatable(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["size", "--reps", "1", "--n", "20", "--seed", "7", "--threads", "1"]
    assert cli.main(argv + ["--out", str(a)]) == 0
    assert cli.main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = read_rows(a)
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 8
    assert all(r["reject_rate"] in ("0", "1") for r in rows)


def test_size_threads_from_environment(tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["size", "--reps", "6", "--n", "20", "--set", "block_size=2"]
    monkeypatch.setenv("EE_TESTKIT_THREADS", "2")
    assert cli.main(argv + ["--out", str(a)]) == 0
    monkeypatch.setenv("EE_TESTKIT_THREADS", "1")
    assert cli.main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_power_grid_rows(tmp_path):
    out = tmp_path / "p.csv"
    code = cli.main(["power", "--reps", "2", "--n", "30", "--delta-grid", "0.5,1,1.5",
                     "--hyp", "h0a", "--out", str(out)])
    assert code == 0
    rows = read_rows(out)
    assert [r["delta"] for r in rows] == ["0.5", "0.5", "1", "1", "1.5", "1.5"]
    assert {r["stat"] for r in rows} == {"BF7", "LM"}


def test_custom_beta0(tmp_path):
    out = tmp_path / "c.csv"
    code = cli.main(["size", "--reps", "2", "--n", "20", "--set", "beta0=[0.5, 4, 0.25]",
                     "--set", "name=mine", "--stat", "D", "--out", str(out)])
    assert code == 0
    rows = read_rows(out)
    assert rows[0]["scenario"] == "mine" and rows[0]["beta2"] == "4"


def test_validate_suite_pass_and_report(tmp_path, capsys):
    report = tmp_path / "r.json"
    assert cli.main(["validate", "--suite", "remark3", "--suite", "penrose",
                     "--report", str(report)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("PASS remark3:") and out[1].startswith("PASS penrose:")
    data = json.loads(report.read_text())
    assert data["passed"] and [s["suite"] for s in data["suites"]] == ["remark3", "penrose"]


def test_validate_failure_exit_3(monkeypatch, capsys):
    from ee_testkit import validate

    monkeypatch.setitem(validate.SUITES, "penrose",
                        lambda **kw: validate.SuiteResult("penrose", False, {"x": 1.0}, "< 0"))
    assert cli.main(["validate", "--suite", "penrose"]) == 3
    captured = capsys.readouterr()
    assert captured.out.startswith("FAIL penrose")
    assert json.loads(captured.err)["failed"][0]["suite"] == "penrose"


def test_nonconvergence_exit_2(linear_csv, monkeypatch, capsys):
    def boom(*a, **k):
        raise cli.ConvergenceError("did not converge")

    monkeypatch.setattr(cli, "run_all_tests", boom)
    path = linear_csv[0]
    assert cli.main(["test", str(path), "--model", "linear", "--restriction", "linear",
                     "--R", "1,0"]) == 2
    assert "did not converge" in capsys.readouterr().err
