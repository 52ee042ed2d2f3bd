"""Empirical size and power of the tests for the nonlinear regression

    y = b1 + x2 * b2 + exp(x3 * b3) + e,   x2, x3, e ~ N(0, 0.16) i.i.d.

under the equivalent nulls ``h0a: b2 - 1/b3 = 0`` and ``h0b: b2*b3 - 1 = 0``.

Random numbers
--------------
Replication ``i`` of an experiment with master seed ``s`` draws from its
own counter-based stream.  The stream key is
``mix(mix(s) XOR i)``, where ``mix(x)`` is the SplitMix64 output for state
``x`` (increment by ``0x9E3779B97F4A7C15``, then avalanche).  Uniform
``k = 0, 1, ...`` is ``((mix(key + k * 0x9E3779B97F4A7C15) >> 11) + 0.5) / 2**53``,
i.e. the k-th output of a SplitMix64 generator seeded with the key.
Consecutive uniform pairs become normals by the Box-Muller transform; the
first ``n`` normals give ``x2``, the next ``n`` give ``x3`` and the last
``n`` the errors.  A replication's data therefore depend only on
``(s, i, n)``, never on scheduling.

Replications are processed in fixed blocks of ``block_size``; blocks can be
distributed over worker processes and their counts are summed, so results
are identical for any worker count.
"""

import csv
import io
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .constraints import get_restriction, moore_penrose_batch
from .errors import InputError
from .estimate import (
    FitOptions,
    covariance_parts,
    fit_nls_batch,
    fit_nls_constrained_batch,
    nls_scale,
    score_covariance,
)
from .objective import Dataset, get_mean_function, nls_evaluate_batch, nls_scores_batch
from .stats import (
    D_NEGATIVE_TOL,
    STAT_NAMES,
    bf_values,
    distance_values,
    lm_values,
    p_values,
    wald_values,
)

log = logging.getLogger(__name__)

__all__ = [
    "SCENARIOS",
    "SIZE_GRID_N",
    "DEFAULT_DELTA_GRID",
    "ScenarioConfig",
    "CellResult",
    "ExperimentResult",
    "splitmix64",
    "uniform_stream",
    "generate_dataset",
    "generate_block",
    "run_size_experiment",
    "run_power_experiment",
    "result_rows",
    "write_csv",
    "CSV_COLUMNS",
]

SCENARIOS = {
    "I": (1.0, 10.0, 0.1),
    "II": (1.0, 5.0, 0.2),
    "III": (1.0, 2.0, 0.5),
    "IV": (1.0, 1.0, 1.0),
}
SIZE_GRID_N = (20, 50, 100, 500)
DEFAULT_DELTA_GRID = tuple(np.round(np.linspace(0.4, 1.6, 13), 10))
DEFAULT_STATS = ("BF7", "W", "LM", "D")
NOISE_SD = 0.4  # variance 0.16
MODEL = "linear2-exp3"
CSV_COLUMNS = ("scenario", "beta2", "beta3", "n", "stat", "hyp", "delta",
               "reject_rate", "mc_se", "excluded", "reps")
UNRELIABLE_FRACTION = 0.05

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x):
    """SplitMix64 finalizer (increment then avalanche), elementwise on uint64."""
    with np.errstate(over="ignore"):  # arithmetic is modulo 2**64 by design
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _stream_keys(master_seed, reps):
    master = np.asarray([master_seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return splitmix64(splitmix64(master) ^ np.asarray(reps, dtype=np.uint64))


def uniform_stream(keys, count):
    """``count`` uniforms in (0, 1) per key, shape ``(len(keys), count)``."""
    keys = np.asarray(keys, dtype=np.uint64)[:, None]
    k = np.arange(count, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        bits = splitmix64(keys + k * _GOLDEN) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0 ** -53


def _normals(keys, count):
    m = (count + 1) // 2
    u = uniform_stream(keys, 2 * m)
    u1, u2 = u[:, 0::2], u[:, 1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    z = np.empty((u.shape[0], 2 * m))
    z[:, 0::2] = rad * np.cos(ang)
    z[:, 1::2] = rad * np.sin(ang)
    return z[:, :count]


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the experiment grid.

    ``beta0`` must satisfy the null ``b2 * b3 = 1``; data are generated with
    ``b2 = delta * beta0[1]`` so that ``b2 * b3 = delta``.  Both estimators
    start from ``beta0`` unless ``initial_point`` is given.
    """

    beta0: tuple = SCENARIOS["IV"]
    n: int = 100
    replications: int = 5000
    master_seed: int = 42
    hypothesis: str = "both"
    delta: float = 1.0
    nominal_level: float = 0.05
    statistics: tuple = DEFAULT_STATS
    name: str = ""
    covariance: str = "information"
    scale_ddof: bool = True
    block_size: int = 250
    initial_point: Optional[tuple] = None
    keep_values: bool = False

    def __post_init__(self):
        b = tuple(float(v) for v in self.beta0)
        object.__setattr__(self, "beta0", b)
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if len(b) != 3:
            raise InputError("beta0 must have three entries")
        if abs(b[1] * b[2] - 1.0) > 1e-12:
            raise InputError(f"scenario beta0 {b} does not satisfy b2*b3 = 1")
        if self.replications < 1:
            raise InputError("replications must be >= 1")
        if self.n < 4:
            raise InputError("n must exceed the number of parameters")
        if not 0.0 < self.nominal_level < 1.0:
            raise InputError("nominal level must lie in (0, 1)")
        if self.hypothesis not in ("h0a", "h0b", "both"):
            raise InputError(f"hypothesis must be h0a, h0b or both, got {self.hypothesis!r}")
        unknown = [s for s in self.statistics if s not in STAT_NAMES]
        if unknown or not self.statistics:
            raise InputError(f"unknown statistics {unknown}; choose from {STAT_NAMES}")
        if self.covariance not in ("information", "sandwich"):
            raise InputError(f"unknown covariance mode {self.covariance!r}")
        if self.block_size < 1:
            raise InputError("block_size must be >= 1")

    @property
    def hypotheses(self):
        return ("h0a", "h0b") if self.hypothesis == "both" else (self.hypothesis,)

    @property
    def dgp_beta(self):
        b1, b2, b3 = self.beta0
        return np.array([b1, self.delta * b2, b3])

    @property
    def label(self):
        if self.name:
            return self.name
        for k, v in SCENARIOS.items():
            if v == self.beta0:
                return k
        return "custom"


def generate_block(config, reps):
    """Datasets for replication indices ``reps``: ``y`` (B, n), ``X`` (B, n, 2)."""
    reps = np.asarray(reps, dtype=np.int64)
    n = config.n
    z = _normals(_stream_keys(config.master_seed, reps), 3 * n) * NOISE_SD
    x2, x3, e = z[:, :n], z[:, n:2 * n], z[:, 2 * n:]
    b1, b2, b3 = config.dgp_beta
    y = b1 + x2 * b2 + np.exp(x3 * b3) + e
    return y, np.stack([x2, x3], axis=-1)


def generate_dataset(config, rep_index):
    """The dataset of a single replication."""
    if not 0 <= rep_index < config.replications:
        raise InputError(f"replication index {rep_index} out of range")
    y, X = generate_block(config, [rep_index])
    return Dataset(y[0], X[0])


# ---------------------------------------------------------------------------
# one block of replications


def _pd(M):
    # positive definiteness of a stack of small symmetric matrices
    with np.errstate(invalid="ignore"):
        ok = np.all(np.isfinite(M), axis=(-2, -1))
        Ms = np.where(ok[..., None, None], M, np.eye(M.shape[-1]))
        return ok & (np.linalg.eigvalsh(Ms)[..., 0] > 0)


def _run_block(config, start, stop):
    """Statistic values and validity masks for replications ``start..stop-1``."""
    mean = get_mean_function(MODEL)
    reps = np.arange(start, stop)
    y, X = generate_block(config, reps)
    n, p = config.n, 3
    beta0 = np.asarray(config.initial_point if config.initial_point is not None
                       else config.beta0, dtype=float)
    opts = FitOptions()
    ufit = fit_nls_batch(y, X, mean, beta0, opts)
    b_hat = ufit.beta
    ssr = 2.0 * n * ufit.cost
    scale = nls_scale(ssr, n, p, config.scale_ddof, np.mean(y * y, axis=-1))
    sandwich = config.covariance == "sandwich"
    with np.errstate(all="ignore"):
        q_hat, _, A_hat = nls_evaluate_batch(y, X, mean, b_hat, scale)
        B_hat = (score_covariance(nls_scores_batch(y, X, mean, b_hat, scale))
                 if sandwich else -A_hat)
    u_ok = ufit.converged & np.isfinite(q_hat)

    out = {}
    need_bf = [int(s[2:]) for s in config.statistics if s.startswith("BF")]
    for hyp in config.hypotheses:
        restr = get_restriction(hyp)
        cfit = fit_nls_constrained_batch(y, X, mean, restr, beta0, opts)
        b_tilde = cfit.beta
        with np.errstate(all="ignore"):
            q_tilde, grad, A_t = nls_evaluate_batch(y, X, mean, b_tilde, scale)
            B_t = (score_covariance(nls_scores_batch(y, X, mean, b_tilde, scale))
                   if sandwich else -A_t)
            g_hat = restr.g(b_hat)
            G_hat = restr.G(b_hat)
            G_t = restr.G(b_tilde)
            dom_hat = restr.in_domain(b_hat)
        Gp, rank_ok = moore_penrose_batch(G_t)
        c_ok = u_ok & cfit.converged & rank_ok & np.isfinite(q_tilde)

        # keep singular members out of the linear algebra; they are masked below
        safe_t = _pd(-A_t)
        safe_h = _pd(-A_hat) & dom_hat & np.all(np.isfinite(G_hat), axis=(-2, -1))
        eye = np.eye(p)
        with np.errstate(all="ignore"):
            A_ts = np.where(safe_t[:, None, None], A_t, -eye)
            A_hs = np.where(safe_h[:, None, None], A_hat, -eye)
            G_ts = np.where(c_ok[:, None, None], G_t, np.eye(restr.q, p))
            G_hs = np.where(safe_h[:, None, None], G_hat, np.eye(restr.q, p))
            S_t, Om_t = covariance_parts(A_ts, np.where(safe_t[:, None, None], B_t, -eye), G_ts)
            _, Om_h = covariance_parts(A_hs, np.where(safe_h[:, None, None], B_hat, -eye), G_hs)
        cov_ok = c_ok & safe_t & _pd(S_t) & _pd(Om_t)
        wald_ok = u_ok & safe_h & _pd(Om_h)

        Gps = np.where(c_ok[:, None, None], Gp, 0.0)
        with np.errstate(all="ignore"):
            lam = np.einsum("bpq,bp->bq", Gps, grad)
            dbeta = b_hat - b_tilde
            gh = np.where(dom_hat[:, None], g_hat, 0.0)
            Om_ts = np.where(cov_ok[:, None, None], Om_t, np.eye(restr.q))
            Om_hs = np.where(wald_ok[:, None, None], Om_h, np.eye(restr.q))
            for v in need_bf:
                val = bf_values(v, n, lam, grad, gh, G_ts, dbeta, S_t, Om_ts, Gps)
                ok = (cov_ok if v <= 3 else c_ok) & dom_hat
                out[(f"BF{v}", hyp)] = (val, ok & np.isfinite(val))
            if "W" in config.statistics:
                val = wald_values(n, gh, Om_hs)
                ok = wald_ok & np.isfinite(val)
                out[("W", hyp)] = (val, ok)
            if "LM" in config.statistics:
                val = lm_values(n, lam, S_t, Om_ts)
                out[("LM", hyp)] = (val, cov_ok & np.isfinite(val))
            if "D" in config.statistics:
                val = distance_values(n, q_hat, q_tilde)
                ok = c_ok & np.isfinite(val) & (val >= -D_NEGATIVE_TOL)
                out[("D", hyp)] = (val, ok)
    return out


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class CellResult:
    stat: str
    hyp: str
    rejections: int
    valid: int
    excluded: int
    values: Optional[np.ndarray] = None
    p_values: Optional[np.ndarray] = None

    @property
    def reject_rate(self):
        return self.rejections / self.valid if self.valid else float("nan")

    @property
    def mc_se(self):
        r = self.reject_rate
        return float(np.sqrt(r * (1.0 - r) / self.valid)) if self.valid else float("nan")


@dataclass
class ExperimentResult:
    config: ScenarioConfig
    cells: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def unreliable(self):
        R = self.config.replications
        return any(c.excluded > UNRELIABLE_FRACTION * R for c in self.cells.values())

    def rate(self, stat, hyp):
        return self.cells[(stat, hyp)].reject_rate

    def se(self, stat, hyp):
        return self.cells[(stat, hyp)].mc_se

    def rates(self):
        return {k: c.reject_rate for k, c in self.cells.items()}

    def p_values(self, stat, hyp):
        """Per-replication p-values, NaN where excluded (requires ``keep_values``)."""
        c = self.cells[(stat, hyp)]
        if c.p_values is None:
            raise InputError("run the experiment with keep_values=True")
        return c.p_values

    def values(self, stat, hyp):
        """Per-replication statistic values, NaN where excluded."""
        c = self.cells[(stat, hyp)]
        if c.values is None:
            raise InputError("run the experiment with keep_values=True")
        return c.values


def _block_task(args):
    config, start, stop = args
    out = _run_block(config, start, stop)
    q = 1
    level = config.nominal_level
    summary = {}
    for key, (val, ok) in out.items():
        pv = p_values(np.where(ok, val, np.nan), q)
        rej = ok & (pv < level)
        kept = None
        if config.keep_values:
            kept = (np.where(ok, val, np.nan), np.where(ok, pv, np.nan))
        summary[key] = (int(rej.sum()), int(ok.sum()), kept)
    return summary


def _blocks(config):
    R, bs = config.replications, config.block_size
    return [(config, s, min(s + bs, R)) for s in range(0, R, bs)]


def resolve_threads(threads):
    """``None`` reads ``EE_TESTKIT_THREADS``; 0 means one worker per CPU."""
    if threads is None:
        env = os.environ.get("EE_TESTKIT_THREADS", "1")
        try:
            threads = int(env)
        except ValueError:
            raise InputError(f"EE_TESTKIT_THREADS must be an integer, got {env!r}") from None
    if threads < 0:
        raise InputError("threads must be >= 0")
    return threads or (os.cpu_count() or 1)


def _map_blocks(tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        return [_block_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(_block_task, tasks))


def _aggregate(config, summaries, seconds):
    res = ExperimentResult(config, seconds=seconds)
    R = config.replications
    for key in summaries[0]:
        rej = sum(s[key][0] for s in summaries)
        valid = sum(s[key][1] for s in summaries)
        vals = pv = None
        if config.keep_values:
            vals = np.concatenate([s[key][2][0] for s in summaries])
            pv = np.concatenate([s[key][2][1] for s in summaries])
        res.cells[key] = CellResult(key[0], key[1], rej, valid, R - valid, vals, pv)
    if res.unreliable:
        log.warning("scenario %s n=%d delta=%g: more than %.0f%% of replications excluded",
                    config.label, config.n, config.delta, 100 * UNRELIABLE_FRACTION)
    return res


def _run(config, threads):
    t0 = time.perf_counter()
    summaries = _map_blocks(_blocks(config), resolve_threads(threads))
    return _aggregate(config, summaries, time.perf_counter() - t0)


def run_size_experiment(config, threads=1):
    """Empirical rejection rates under the null (``delta`` must be 1).

    Replications whose estimators fail to converge are excluded from the
    affected statistics only and counted in ``CellResult.excluded``.
    """
    if config.delta != 1.0:
        raise InputError("size experiments require delta = 1; use run_power_experiment")
    return _run(config, threads)


def run_power_experiment(config, delta_grid=DEFAULT_DELTA_GRID, threads=1):
    """Rejection rates of the ``delta = 1`` null for data generated at each delta.

    Every grid point reuses the master seed, so ``delta = 1`` reproduces the
    size experiment exactly.
    """
    grid = [float(d) for d in delta_grid]
    if not grid:
        raise InputError("delta grid is empty")
    return [_run(replace(config, delta=d), threads) for d in grid]


# ---------------------------------------------------------------------------
# output


def _fmt(x):
    return f"{x:.6g}"


def result_rows(result):
    c = result.config
    order = {s: i for i, s in enumerate(STAT_NAMES)}
    rows = []
    for (stat, hyp) in sorted(result.cells, key=lambda k: (order[k[0]], k[1])):
        cell = result.cells[(stat, hyp)]
        rows.append({
            "scenario": c.label, "beta2": _fmt(c.beta0[1]), "beta3": _fmt(c.beta0[2]),
            "n": str(c.n), "stat": stat, "hyp": hyp, "delta": _fmt(c.delta),
            "reject_rate": _fmt(cell.reject_rate), "mc_se": _fmt(cell.mc_se),
            "excluded": str(cell.excluded), "reps": str(c.replications),
        })
    return rows


def write_csv(results, out=None):
    """Write experiment results in the fixed CSV schema.

    ``out`` may be a path, a text stream, or ``None`` (return the text).
    """
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in results:
        w.writerows(result_rows(r))
    text = buf.getvalue()
    if out is None:
        return text
    if hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
