"""Unconstrained and constrained extremum estimators, multipliers, and the
covariance building blocks A, B, S and Omega.

Nonlinear least squares problems are solved by Levenberg-Marquardt on the
residuals; other objectives by BFGS.  Equality restrictions are handled by
the augmented-Lagrangian method whose subproblems reuse the same
unconstrained machinery.  The ``*_batch`` functions solve many independent
NLS problems at once and back both the single-dataset API and the Monte
Carlo driver.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _solvers
from .constraints import eval_restriction, moore_penrose, moore_penrose_batch
from .errors import (
    DomainError,
    InputError,
    NotPositiveDefiniteError,
    RankDeficiencyError,
    SingularMatrixError,
)
from .objective import nls_residuals

__all__ = [
    "FitOptions",
    "Fit",
    "ConstrainedFit",
    "CovarianceComponents",
    "fit_unconstrained",
    "fit_constrained",
    "recover_multipliers",
    "compute_covariance_components",
    "covariance_parts",
    "nls_scale",
    "fit_nls_batch",
    "fit_nls_constrained_batch",
]


@dataclass
class FitOptions:
    """Solver settings.

    ``bounds`` is an optional ``(lower, upper)`` pair of arrays.  Jittered
    multistart points are drawn from ``seed``.  The constrained solver
    declares convergence when ``||g||_inf <= constraint_tolerance`` and the
    stationarity residual ``<= stationarity_tolerance``.
    """

    initial_point: Optional[np.ndarray] = None
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-12
    bounds: Optional[tuple] = None
    multistart_count: int = 1
    seed: int = 0
    constraint_tolerance: float = 1e-10
    stationarity_tolerance: float = 1e-8
    max_outer: int = 50

    def __post_init__(self):
        if min(self.gradient_tolerance, self.step_tolerance,
               self.constraint_tolerance, self.stationarity_tolerance) <= 0:
            raise InputError("tolerances must be positive")
        if self.max_iterations < 1 or self.multistart_count < 1:
            raise InputError("max_iterations and multistart_count must be >= 1")
        if self.bounds is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
            self.bounds = (lo, hi)


@dataclass
class Fit:
    beta: np.ndarray
    objective_value: float
    gradient_norm: float
    iterations: int
    converged: bool


@dataclass
class ConstrainedFit:
    beta: np.ndarray
    multipliers: np.ndarray
    constraint_violation: float
    stationarity_residual: float
    converged: bool
    objective_value: float = np.nan
    outer_iterations: int = 0
    penalty: float = np.nan


@dataclass
class CovarianceComponents:
    A: np.ndarray
    B: np.ndarray
    S: np.ndarray
    Omega: np.ndarray
    evaluation_point: np.ndarray
    G: np.ndarray = field(repr=False, default=None)
    information_equality: bool = True


# ---------------------------------------------------------------------------
# batched NLS kernels


def _as_batch(y, X, beta0):
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if y.ndim == 1:
        y, X = y[None], X[None]
    beta0 = np.asarray(beta0, dtype=float)
    beta0 = np.broadcast_to(beta0, (y.shape[0], beta0.shape[-1])).copy()
    return y, X, beta0


def _nls_fun(y, X, mean):
    def fun(beta, idx):
        with np.errstate(over="ignore", invalid="ignore"):
            return nls_residuals(y[idx], X[idx], mean, beta, 1.0)
    return fun


def fit_nls_batch(y, X, mean, beta0, opts=None):
    """Levenberg-Marquardt on a batch of NLS problems at unit scale.

    ``y`` is (B, n), ``X`` is (B, n, k).  Returns a
    :class:`~ee_testkit._solvers.BatchResult`; ``cost`` equals
    ``SSR / (2 n)``, i.e. ``-Q_n`` at unit scale.
    """
    opts = opts or FitOptions()
    y, X, beta0 = _as_batch(y, X, beta0)
    return _solvers.levenberg_marquardt(
        _nls_fun(y, X, mean), beta0, gtol=opts.gradient_tolerance,
        xtol=opts.step_tolerance, max_iter=opts.max_iterations, bounds=opts.bounds,
    )


@dataclass
class ConstrainedBatch:
    beta: np.ndarray
    multipliers: np.ndarray
    gradient: np.ndarray
    cost: np.ndarray
    violation: np.ndarray
    stationarity: np.ndarray
    converged: np.ndarray
    outer_iterations: np.ndarray
    penalty: np.ndarray


def _restriction_values(restriction, beta):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        g = np.asarray(restriction.g(beta), dtype=float)
        G = np.asarray(restriction.G(beta), dtype=float)
    bad = ~restriction.in_domain(beta)
    g = np.where(bad[..., None], np.nan, g)
    G = np.where(bad[..., None, None], np.nan, G)
    return g, G


def _kkt_residual(data_fun, restriction, beta, idx):
    # gradient, cost, g, recovered multipliers, rank flag, stationarity residual
    r, J = data_fun(beta, idx)
    g, G = _restriction_values(restriction, beta)
    Gp, ok = moore_penrose_batch(G)
    with np.errstate(invalid="ignore"):
        grad = -np.einsum("bmp,bm->bp", J, r)
        cost = 0.5 * np.einsum("bm,bm->b", r, r)
        lam = np.einsum("bpq,bp->bq", Gp, grad)
        stat = np.max(np.abs(grad - np.einsum("bqp,bq->bp", G, lam)), axis=-1)
    stat = np.where(np.isfinite(stat), stat, np.inf)
    return grad, cost, g, lam, ok, stat


def _kkt_polish(data_fun, restriction, beta, live, steps=3):
    """Gauss-Newton steps on the linearized first-order conditions.

    Solves ``min ||r + J d||^2  s.t.  g + G d = 0`` and keeps a step only if
    it lowers the constraint violation or the stationarity residual without
    raising the other above rounding level.  Exact in one step for linear models with
    linear restrictions.
    """
    beta = beta.copy()
    B, p = beta.shape
    idx = np.arange(B)
    grad, cost, g, lam, ok, stat = _kkt_residual(data_fun, restriction, beta, idx)
    with np.errstate(invalid="ignore"):
        viol = np.max(np.abs(g), axis=-1)
    eps = np.finfo(float).eps
    floor = 16 * eps * (1.0 + np.max(np.abs(beta), axis=-1))
    for _ in range(steps):
        a = np.flatnonzero(live & ok & np.isfinite(viol) & np.isfinite(stat))
        if a.size == 0:
            break
        r, J = data_fun(beta[a], a)
        _, G = _restriction_values(restriction, beta[a])
        q = G.shape[-2]
        K = np.zeros((a.size, p + q, p + q))
        K[:, :p, :p] = np.swapaxes(J, -1, -2) @ J
        K[:, :p, p:] = np.swapaxes(G, -1, -2)
        K[:, p:, :p] = G
        rhs = np.concatenate([grad[a], -g[a]], axis=-1)
        with np.errstate(all="ignore"):
            d = _solvers.batched_solve(K, rhs)[:, :p]
            trial = beta[a] + d
            gr, c, gt, lt, okt, st = _kkt_residual(data_fun, restriction, trial, a)
            vt = np.max(np.abs(gt), axis=-1)
        sfloor = 64 * eps * (1.0 + np.max(np.abs(grad[a]), axis=-1))
        better = (okt & np.isfinite(c)
                  & (vt <= np.maximum(viol[a], floor[a]))
                  & (st <= np.maximum(stat[a], sfloor))
                  & ((vt < viol[a]) | (st < stat[a])))
        if not better.any():
            break
        b = a[better]
        beta[b] = trial[better]
        grad[b], stat[b], viol[b], ok[b] = gr[better], st[better], vt[better], okt[better]
    return beta


def fit_nls_constrained_batch(y, X, mean, restriction, beta0, opts=None):
    """Augmented-Lagrangian fit of a batch of NLS problems at unit scale.

    Each subproblem is a least squares problem in the stacked residuals
    ``[r(beta); sqrt(mu) g(beta) + lam / sqrt(mu)]`` and is solved by
    Levenberg-Marquardt.  The returned multipliers are recomputed from the
    first-order condition, ``lam = (G^+)' grad Q``, at the final point.
    """
    opts = opts or FitOptions()
    y, X, beta0 = _as_batch(y, X, beta0)
    data_fun = _nls_fun(y, X, mean)

    def cons(beta, idx):
        return _restriction_values(restriction, beta)[0]

    def inner(beta, lam, mu, idx):
        sm = np.sqrt(mu)

        def fun(b, sub):
            r, J = data_fun(b, idx[sub])
            g, G = _restriction_values(restriction, b)
            s = sm[sub]
            rc = s[:, None] * g + lam[sub] / s[:, None]
            Jc = s[:, None, None] * G
            return np.concatenate([r, rc], axis=-1), np.concatenate([J, Jc], axis=-2)

        res = _solvers.levenberg_marquardt(
            fun, beta, gtol=opts.stationarity_tolerance, xtol=opts.step_tolerance,
            max_iter=opts.max_iterations, bounds=opts.bounds,
        )
        stat = _kkt_residual(data_fun, restriction, res.beta, idx)[-1]
        return res.beta, res.converged | (stat <= opts.stationarity_tolerance)

    al = _solvers.augmented_lagrangian(
        inner, cons, beta0, restriction.q, ctol=opts.constraint_tolerance,
        max_outer=opts.max_outer,
    )
    beta = _kkt_polish(data_fun, restriction, al.beta, ~al.failed)
    grad, cost, g, lam, ok, stat = _kkt_residual(
        data_fun, restriction, beta, np.arange(beta.shape[0]))
    with np.errstate(invalid="ignore"):
        viol = np.max(np.abs(g), axis=-1)
    converged = (
        ok & ~al.failed & np.isfinite(cost)
        & (viol <= opts.constraint_tolerance)
        & (stat <= opts.stationarity_tolerance)
    )
    return ConstrainedBatch(beta, lam, grad, cost, viol, stat, converged,
                            al.outer_iterations, al.penalty)


# ---------------------------------------------------------------------------
# single-dataset API


def _initial_point(obj, opts):
    if opts.initial_point is None:
        return np.ones(obj.n_params)
    beta0 = np.asarray(opts.initial_point, dtype=float)
    if beta0.shape != (obj.n_params,):
        raise InputError(f"initial point has shape {beta0.shape}, expected ({obj.n_params},)")
    return beta0


def _starts(beta0, opts):
    starts = [beta0]
    rng = np.random.default_rng(opts.seed)
    for _ in range(opts.multistart_count - 1):
        starts.append(beta0 + 0.1 * np.maximum(1.0, np.abs(beta0))
                      * rng.standard_normal(beta0.size))
    return np.array(starts)


def _safe_value(obj, beta):
    try:
        return obj.value(beta)
    except DomainError:
        return -np.inf


def _is_nls(obj):
    return hasattr(obj, "residuals") and hasattr(obj, "dataset")


def fit_unconstrained(obj, opts=None):
    """Maximize ``obj`` without restrictions.

    Returns the best converged start when ``opts.multistart_count > 1``.
    Non-convergence is reported through ``Fit.converged``.

    Raises
    ------
    DomainError
        If the objective is not finite at the initial point.
    """
    opts = opts or FitOptions()
    beta0 = _initial_point(obj, opts)
    if not np.isfinite(_safe_value(obj, beta0)):
        raise DomainError(f"objective is not finite at the initial point {beta0}")
    starts = _starts(beta0, opts)

    if _is_nls(obj):
        d = obj.dataset
        y = np.broadcast_to(d.response, (len(starts),) + d.response.shape)
        X = np.broadcast_to(d.regressors, (len(starts),) + d.regressors.shape)
        # the batch runs at unit scale; tolerances are converted accordingly
        bopts = FitOptions(**{**opts.__dict__, "initial_point": None,
                              "gradient_tolerance": opts.gradient_tolerance * obj.scale})
        res = fit_nls_batch(y, X, obj.mean, starts, bopts)
        gnorm = res.grad_norm / obj.scale
        conv = res.finite_start & (gnorm <= opts.gradient_tolerance)
        betas, iters = res.beta, res.iterations
    else:
        def fun(beta):
            try:
                ev_v = obj.value(beta)
                return -ev_v, -obj.gradient(beta)
            except DomainError:
                return np.inf, np.full(beta.size, np.nan)

        results = [_solvers.bfgs(fun, s, opts.gradient_tolerance, opts.step_tolerance,
                                 opts.max_iterations, opts.bounds) for s in starts]
        betas = np.concatenate([r.beta for r in results])
        gnorm = np.concatenate([r.grad_norm for r in results])
        conv = np.concatenate([r.converged for r in results])
        iters = np.concatenate([r.iterations for r in results])

    values = np.array([_safe_value(obj, b) for b in betas])
    pool = np.flatnonzero(conv) if conv.any() else np.arange(len(betas))
    best = pool[np.argmax(values[pool])]
    return Fit(betas[best].copy(), float(values[best]), float(gnorm[best]),
               int(iters[best]), bool(conv[best]))


def _generic_stationarity(obj, restriction, beta):
    g, G = _restriction_values(restriction, beta)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(G))):
        return np.inf
    try:
        grad = obj.gradient(beta)
        lam = recover_multipliers(grad, G)
    except (DomainError, RankDeficiencyError):
        return np.inf
    return float(np.max(np.abs(grad - G.T @ lam)))


def fit_constrained(obj, restriction, opts=None):
    """Maximize ``obj`` subject to ``restriction.g(beta) = 0``.

    Augmented Lagrangian: penalty starts at 10 and grows tenfold whenever
    the constraint violation fails to shrink by a factor of four.  The
    reported multipliers are ``(G^+)' grad Q(beta~)``.

    Raises
    ------
    RankDeficiencyError
        If ``G(beta~)`` does not have full row rank.
    """
    opts = opts or FitOptions()
    beta0 = _initial_point(obj, opts)
    if not np.isfinite(_safe_value(obj, beta0)):
        raise DomainError(f"objective is not finite at the initial point {beta0}")

    if _is_nls(obj):
        d = obj.dataset
        # stationarity is measured on the unit-scale criterion inside the
        # batch kernel; convert the tolerance to the objective's scale
        bopts = FitOptions(**{**opts.__dict__, "initial_point": None,
                              "stationarity_tolerance": opts.stationarity_tolerance * obj.scale})
        res = fit_nls_constrained_batch(d.response, d.regressors, obj.mean,
                                        restriction, beta0[None], bopts)
        beta = res.beta[0]
        outer, penalty = int(res.outer_iterations[0]), float(res.penalty[0])
        failed = not bool(res.converged[0])
    else:
        def cons(beta, idx):
            return _restriction_values(restriction, beta)[0]

        def inner(beta, lam, mu, idx):
            l, m = lam[0], mu[0]

            def fun(b):
                g, G = _restriction_values(restriction, b)
                if not np.all(np.isfinite(g)):
                    return np.inf, np.full(b.size, np.nan)
                try:
                    v = -obj.value(b) + l @ g + 0.5 * m * (g @ g)
                    grad = -obj.gradient(b) + G.T @ (l + m * g)
                except DomainError:
                    return np.inf, np.full(b.size, np.nan)
                return v, grad

            r = _solvers.bfgs(fun, beta[0], opts.stationarity_tolerance,
                              opts.step_tolerance, max(opts.max_iterations, 500),
                              opts.bounds)
            ok = r.converged[0] or _generic_stationarity(obj, restriction, r.beta[0]) \
                <= opts.stationarity_tolerance
            return r.beta, np.array([ok])

        al = _solvers.augmented_lagrangian(
            inner, cons, beta0[None], restriction.q,
            ctol=opts.constraint_tolerance, max_outer=opts.max_outer,
        )
        beta = al.beta[0]
        outer, penalty, failed = int(al.outer_iterations[0]), float(al.penalty[0]), bool(al.failed[0])

    gval, G = eval_restriction(restriction, beta)
    grad = obj.gradient(beta)
    lam = recover_multipliers(grad, G)
    stat = float(np.max(np.abs(grad - G.T @ lam)))
    viol = float(np.max(np.abs(gval)))
    conv = (not failed and viol <= opts.constraint_tolerance
            and stat <= opts.stationarity_tolerance)
    return ConstrainedFit(beta, lam, viol, stat, bool(conv), _safe_value(obj, beta),
                          outer, penalty)


def recover_multipliers(gradQ, G):
    """Lagrange multipliers from the first-order condition, ``(G^+)' gradQ``."""
    G = np.asarray(G, dtype=float)
    return np.swapaxes(moore_penrose(G), -1, -2) @ np.asarray(gradQ, dtype=float)


def covariance_parts(A, B, G):
    """``S = G (-A)^{-1} G'`` and ``Omega = G A^{-1} B A^{-1} G'``.

    Broadcasts over leading batch axes.  Returns ``(S, Omega)``.
    """
    AiGt = np.linalg.solve(A, np.swapaxes(G, -1, -2))
    S = -G @ AiGt
    Omega = np.swapaxes(AiGt, -1, -2) @ B @ AiGt
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    Omega = 0.5 * (Omega + np.swapaxes(Omega, -1, -2))
    return S, Omega


def score_covariance(scores):
    """Sample covariance (divisor n) of per-observation scores ``(..., n, p)``."""
    c = scores - scores.mean(axis=-2, keepdims=True)
    return np.swapaxes(c, -1, -2) @ c / scores.shape[-2]


def compute_covariance_components(obj, restriction, beta, mode=None):
    """Estimate A, B, S and Omega at ``beta``.

    Parameters
    ----------
    mode : {"information", "sandwich"}, optional
        ``"sandwich"`` estimates B by the sample covariance of the
        per-observation scores; ``"information"`` sets ``B = -A``.  The
        default is ``"sandwich"`` when the objective exposes scores.
    """
    beta = np.asarray(beta, dtype=float)
    if mode is None:
        mode = "sandwich" if getattr(obj, "scores_available", False) else "information"
    if mode not in ("information", "sandwich"):
        raise InputError(f"unknown covariance mode {mode!r}")
    A = np.asarray(obj.hessian(beta), dtype=float)
    try:
        np.linalg.cholesky(-A)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            "-A is not positive definite at the evaluation point; "
            "evaluate at a (local) maximizer of the objective"
        ) from None
    if mode == "sandwich":
        if not getattr(obj, "scores_available", False):
            raise InputError("objective does not expose per-observation scores")
        B = score_covariance(obj.scores(beta))
    else:
        B = -A
    _, G = eval_restriction(restriction, beta)
    S, Omega = covariance_parts(A, B, G)
    for name, M in (("S", S), ("Omega", Omega)):
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise SingularMatrixError(f"{name} is not positive definite") from None
    return CovarianceComponents(A, B, S, Omega, beta, G, mode == "information")


def nls_scale(ssr, n, p, ddof=True, response_sq_mean=None):
    """Error-variance estimate ``SSR / (n - p)`` (or ``SSR / n``).

    A floor of ``eps * mean(y^2)`` keeps the scale positive for exact fits.
    Works elementwise on arrays.
    """
    denom = n - p if ddof else n
    if denom <= 0:
        raise InputError(f"need more observations than parameters (n={n}, p={p})")
    s = np.asarray(ssr, dtype=float) / denom
    floor = np.finfo(float).eps * (1.0 if response_sq_mean is None
                                   else np.maximum(np.asarray(response_sq_mean), 1e-300))
    return np.maximum(s, floor)
