import numpy as np
import pytest
from scipy import stats as sps

from ee_testkit import validate


def test_ks_uniform_matches_scipy():
    p = np.random.default_rng(1).uniform(size=300)
    assert validate.ks_uniform(p) == pytest.approx(sps.kstest(p, "uniform").statistic, abs=1e-15)


def test_ks_uniform_extremes():
    assert validate.ks_uniform(np.full(10, 0.5)) == pytest.approx(0.5)
    assert validate.ks_uniform((np.arange(4) + 0.5) / 4) == pytest.approx(0.125)


def test_linear_identity_suite():
    r = validate.suite_linear_identity()
    assert r.passed, r.metrics
    assert r.metrics["max_rel_bf7_d"] < 1e-8
    assert r.metrics["max_rel_bf7_ssr"] < 1e-8


def test_penrose_suite():
    r = validate.suite_penrose()
    assert r.passed, r.metrics


def test_info_equality_suite():
    r = validate.suite_info_equality()
    assert r.passed, r.metrics
    assert set(r.metrics) == {f"{k}_{s}" for s in ("I", "II", "III", "IV")
                              for k in ("rel_frobenius", "s_minus_omega")}


def test_prop2_and_calibration_small_runs():
    # mechanics only; the full-size runs live in the acceptance suite
    r = validate.suite_prop2(n=200, reps=40)
    assert set(r.metrics) == {"median_bf1_lm_h0a", "median_bf1_lm_h0b",
                              "max_pairwise_bf_h0a", "max_pairwise_bf_h0b"}
    assert all(np.isfinite(v) for v in r.metrics.values())
    c = validate.suite_calibration(n=100, reps=40)
    assert len(c.metrics) == 14
    assert all(0 < v < 1 for v in c.metrics.values())


def test_suite_result_serializes():
    r = validate.SuiteResult("x", np.bool_(True), {"a": np.float64(0.5)}, "< 1")
    d = r.as_dict()
    assert d == {"suite": "x", "passed": True, "metrics": {"a": 0.5}, "threshold": "< 1"}
    assert type(d["passed"]) is bool and type(d["metrics"]["a"]) is float


def test_run_suites_defaults_to_all(monkeypatch):
    seen = []
    for name in validate.SUITES:
        monkeypatch.setitem(validate.SUITES, name,
                            lambda name=name, **kw: seen.append((name, kw)) or
                            validate.SuiteResult(name, True))
    out = validate.run_suites(seed=5, n=300)
    assert [r.name for r in out] == list(validate.SUITES)
    kw = dict(seen)
    assert kw["remark3"] == {"seed": 5}
    assert kw["calibration"] == {"seed": 5, "n": 300, "threads": 1}
