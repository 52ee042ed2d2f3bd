"""Self-validation suites: numerical identities and asymptotic checks.

Each suite returns a :class:`SuiteResult` holding the measured quantities
and the threshold they were compared against.
"""

from dataclasses import dataclass, field

import numpy as np

from .constraints import get_restriction, linear_restriction, moore_penrose, projection
from .estimate import compute_covariance_components, score_covariance
from .montecarlo import SCENARIOS, ScenarioConfig, generate_block, run_size_experiment
from .objective import Dataset, NlsObjective
from .stats import TestConfig, run_all_tests

__all__ = ["SuiteResult", "SUITES", "run_suite", "run_suites", "ks_uniform"]


@dataclass
class SuiteResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    threshold: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.metrics = {k: float(v) for k, v in self.metrics.items()}

    def as_dict(self):
        return {"suite": self.name, "passed": self.passed,
                "metrics": self.metrics, "threshold": self.threshold}


def ks_uniform(p):
    """Kolmogorov-Smirnov distance between a sample and U(0, 1)."""
    p = np.sort(np.asarray(p, dtype=float))
    m = p.size
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - p), np.max(p - (i - 1) / m)))


def _ols(X, y):
    return np.linalg.lstsq(X, y, rcond=None)[0]


def _restricted_ols(X, y, R, r):
    XtXi = np.linalg.inv(X.T @ X)
    b = XtXi @ X.T @ y
    return b - XtXi @ R.T @ np.linalg.solve(R @ XtXi @ R.T, R @ b - r)


def random_linear_problem(rng, n=50):
    """A random linear model with a random linear restriction."""
    p = int(rng.integers(2, 7))
    q = int(rng.integers(1, 3)) if p > 1 else 1
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    beta = rng.standard_normal(p)
    y = X @ beta + rng.standard_normal(n)
    R = rng.standard_normal((q, p))
    r = R @ beta + 0.3 * rng.standard_normal(q)
    return X, y, R, r


def suite_linear_identity(seed=0, count=100, n=50, tol=1e-8):
    """BF7 = D = (SSR_r - SSR_u) / scale for linear models and restrictions."""
    rng = np.random.default_rng(seed)
    worst_d = worst_f = worst_6 = 0.0
    for _ in range(count):
        X, y, R, r = random_linear_problem(rng, n)
        obj = NlsObjective(Dataset(y, X), "linear")
        res = {s.name: s.value for s in run_all_tests(obj, linear_restriction(R, r),
                                                       config=TestConfig(variants=(6, 7)))}
        bu, br = _ols(X, y), _restricted_ols(X, y, R, r)
        ssr_u = np.sum((y - X @ bu) ** 2)
        ssr_r = np.sum((y - X @ br) ** 2)
        f_num = (ssr_r - ssr_u) / (ssr_u / (n - X.shape[1]))
        bf7 = res["BF7"]
        worst_d = max(worst_d, abs(bf7 - res["D"]) / abs(res["D"]))
        worst_f = max(worst_f, abs(bf7 - f_num) / abs(f_num))
        # the step lies in the row space of R when the restriction binds fully
        dbeta = bu - br
        if np.allclose(projection(R) @ dbeta, dbeta, rtol=0, atol=1e-8 * np.linalg.norm(dbeta)):
            worst_6 = max(worst_6, abs(res["BF6"] - bf7) / abs(bf7))
    ok = max(worst_d, worst_f, worst_6) < tol
    return SuiteResult("remark3", ok, {"max_rel_bf7_d": worst_d, "max_rel_bf7_ssr": worst_f,
                                       "max_rel_bf6_bf7": worst_6}, f"< {tol:g}")


def suite_penrose(seed=0, count=100, tol=1e-9):
    """Penrose identities and projector spectra on random full-row-rank matrices."""
    rng = np.random.default_rng(seed)
    worst = worst_eig = 0.0
    for _ in range(count):
        p = int(rng.integers(1, 11))
        q = int(rng.integers(1, p + 1))
        G = rng.standard_normal((q, p))
        Gp = moore_penrose(G)
        errs = [
            np.abs(G @ Gp @ G - G).max(),
            np.abs(Gp @ G @ Gp - Gp).max(),
            np.abs((G @ Gp).T - G @ Gp).max(),
            np.abs((Gp @ G).T - Gp @ G).max(),
        ]
        worst = max(worst, *errs)
        ev = np.sort(np.linalg.eigvalsh(projection(G)))
        target = np.r_[np.zeros(p - q), np.ones(q)]
        worst_eig = max(worst_eig, np.abs(ev - target).max())
    ok = worst < tol and worst_eig < 1e-8
    return SuiteResult("penrose", ok, {"max_identity_error": worst,
                                       "max_eigenvalue_error": worst_eig},
                       f"identities < {tol:g}, eigenvalues < 1e-08")


def suite_info_equality(seed=0, n=5000, tol=0.1):
    """Score covariance against the negative Hessian at the true parameter."""
    metrics = {}
    for name, beta0 in SCENARIOS.items():
        cfg = ScenarioConfig(beta0=beta0, n=n, replications=1, master_seed=seed)
        y, X = generate_block(cfg, [0])
        obj = NlsObjective(Dataset(y[0], X[0]), scale=0.16)
        A = obj.hessian(np.array(beta0))
        B = score_covariance(obj.scores(np.array(beta0)))
        metrics[f"rel_frobenius_{name}"] = float(np.linalg.norm(B + A) / np.linalg.norm(A))
        comp = compute_covariance_components(obj.with_scale(0.16), get_restriction("h0b"),
                                             np.array(beta0), mode="information")
        metrics[f"s_minus_omega_{name}"] = float(np.abs(comp.S - comp.Omega).max())
    ok = all(v < tol for k, v in metrics.items() if k.startswith("rel")) and \
        all(v <= 1e-10 for k, v in metrics.items() if k.startswith("s_minus"))
    return SuiteResult("info_equality", ok, metrics,
                       f"relative Frobenius < {tol:g}, |S - Omega| <= 1e-10")


BF_NAMES = tuple(f"BF{v}" for v in range(1, 8))


def suite_prop2(seed=42, n=500, reps=1000, scenario="IV", tol=0.05, threads=1):
    """Median relative gaps between BF1 and LM, and among the BF variants."""
    cfg = ScenarioConfig(beta0=SCENARIOS[scenario], n=n, replications=reps,
                         master_seed=seed, statistics=BF_NAMES + ("LM",), keep_values=True)
    res = run_size_experiment(cfg, threads=threads)
    metrics = {}
    for hyp in cfg.hypotheses:
        lm = res.values("LM", hyp)
        bf1 = res.values("BF1", hyp)
        metrics[f"median_bf1_lm_{hyp}"] = float(np.nanmedian(np.abs(bf1 - lm) / np.maximum(lm, 0.1)))
        worst = 0.0
        for i, a in enumerate(BF_NAMES):
            for b in BF_NAMES[i + 1:]:
                va, vb = res.values(a, hyp), res.values(b, hyp)
                worst = max(worst, float(np.nanmedian(
                    np.abs(va - vb) / np.maximum(np.maximum(np.abs(va), np.abs(vb)), 0.1))))
        metrics[f"max_pairwise_bf_{hyp}"] = worst
    ok = all(v < tol for v in metrics.values())
    return SuiteResult("prop2", ok, metrics, f"medians < {tol:g}")


def suite_calibration(seed=42, n=500, reps=5000, scenario="IV", tol=0.03, threads=1):
    """Kolmogorov-Smirnov distance of BF p-values from uniform under the null."""
    cfg = ScenarioConfig(beta0=SCENARIOS[scenario], n=n, replications=reps,
                         master_seed=seed, statistics=BF_NAMES, keep_values=True)
    res = run_size_experiment(cfg, threads=threads)
    metrics = {}
    for hyp in cfg.hypotheses:
        for s in BF_NAMES:
            p = res.p_values(s, hyp)
            metrics[f"ks_{s}_{hyp}"] = ks_uniform(p[np.isfinite(p)])
    ok = all(v < tol for v in metrics.values())
    return SuiteResult("calibration", ok, metrics, f"KS < {tol:g}")


SUITES = {
    "remark3": suite_linear_identity,
    "penrose": suite_penrose,
    "info_equality": suite_info_equality,
    "prop2": suite_prop2,
    "calibration": suite_calibration,
}


def run_suite(name, **kwargs):
    return SUITES[name](**kwargs)


def run_suites(names=None, seed=None, n=None, threads=1):
    """Run the named suites (all by default) with optional common overrides."""
    out = []
    for name in names or SUITES:
        kw = {}
        if seed is not None:
            kw["seed"] = seed
        if n is not None and name in ("prop2", "calibration", "info_equality"):
            kw["n"] = n
        if name in ("prop2", "calibration"):
            kw["threads"] = threads
        out.append(SUITES[name](**kw))
    return out
