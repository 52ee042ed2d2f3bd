"""Bilinear-form, Wald, Lagrange-multiplier and distance statistics.

The ``*_values`` kernels operate on arrays with arbitrary leading batch
axes and are shared by the single-dataset API and the Monte Carlo driver.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import eval_restriction, get_restriction, moore_penrose
from .errors import (
    DimensionError,
    DomainError,
    EETestError,
    InputError,
    SingularMatrixError,
    SolverOrderingError,
)
from .estimate import (
    FitOptions,
    compute_covariance_components,
    fit_constrained,
    fit_unconstrained,
    nls_scale,
    recover_multipliers,
)
from .objective import NlsObjective

__all__ = [
    "STAT_NAMES",
    "TestStatistic",
    "TestInputs",
    "TestConfig",
    "ConvergenceError",
    "chi_square_cdf",
    "chi_square_sf",
    "bf_statistic",
    "wald_statistic",
    "lm_statistic",
    "distance_statistic",
    "run_all_tests",
]

STAT_NAMES = tuple(f"BF{k}" for k in range(1, 8)) + ("W", "LM", "D")
# tolerance for a negative distance statistic before it counts as a solver fault
D_NEGATIVE_TOL = 1e-8


class ConvergenceError(EETestError, RuntimeError):
    """An estimator did not converge; the fits are attached for inspection."""

    def __init__(self, message, fit=None, constrained_fit=None):
        super().__init__(message)
        self.fit = fit
        self.constrained_fit = constrained_fit


# ---------------------------------------------------------------------------
# chi-square distribution

_ITMAX = 2000
_TINY = 1e-300


def _gamma_series(a, z, lg):
    # lower regularized gamma P(a, z) by its power series
    term = 1.0 / a
    total = term.copy()
    ap = a.copy()
    todo = np.ones(a.shape, dtype=bool)
    for _ in range(_ITMAX):
        if not todo.any():
            break
        ap = np.where(todo, ap + 1.0, ap)
        term = np.where(todo, term * z / ap, term)
        total = np.where(todo, total + term, total)
        todo &= np.abs(term) > np.abs(total) * 1e-17
    return total * np.exp(-z + a * np.log(z) - lg)


def _gamma_cfrac(a, z, lg):
    # upper regularized gamma Q(a, z) by a continued fraction (modified Lentz)
    b = z + 1.0 - a
    c = np.full(a.shape, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    todo = np.ones(a.shape, dtype=bool)
    for i in range(1, _ITMAX):
        if not todo.any():
            break
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(todo, h * delta, h)
        todo &= np.abs(delta - 1.0) > 1e-16
    return np.exp(-z + a * np.log(z) - lg) * h


def _regularized_gamma(x, df):
    x = np.asarray(x, dtype=float)
    df = np.asarray(df)
    if np.any(np.isnan(x)):
        raise DomainError("chi-square argument is NaN")
    if np.any(x < 0):
        raise DomainError("chi-square argument must be non-negative")
    if np.any(df < 1) or np.any(df != np.floor(df)):
        raise DomainError("degrees of freedom must be a positive integer")
    x, df = np.broadcast_arrays(x, df.astype(float))
    a = df / 2.0
    z = x / 2.0
    lower = np.zeros(x.shape)
    upper = np.ones(x.shape)
    inf = np.isinf(z)
    lower[inf], upper[inf] = 1.0, 0.0
    pos = (z > 0) & ~inf
    series = pos & (z < a + 1.0)
    frac = pos & ~series
    lgam = np.vectorize(math.lgamma, otypes=[float])
    if series.any():
        P = _gamma_series(a[series], z[series], lgam(a[series]))
        lower[series], upper[series] = P, 1.0 - P
    if frac.any():
        Q = _gamma_cfrac(a[frac], z[frac], lgam(a[frac]))
        lower[frac], upper[frac] = 1.0 - Q, Q
    return lower, upper


def chi_square_cdf(x, df):
    """Chi-square CDF ``P(df/2, x/2)`` (regularized lower incomplete gamma).

    Series expansion when ``x/2 < df/2 + 1``, continued fraction otherwise.
    Accepts scalars or arrays.
    """
    lower, _ = _regularized_gamma(x, df)
    return lower if lower.ndim else float(lower)


def chi_square_sf(x, df):
    """Upper tail ``1 - chi_square_cdf(x, df)``, computed without cancellation."""
    _, upper = _regularized_gamma(x, df)
    return upper if upper.ndim else float(upper)


def p_values(values, df):
    """p-values for statistics that may be negative; ``P(chi2 >= v) = 1`` for v <= 0."""
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, np.nan)
    ok = np.isfinite(values)
    pos = ok & (values > 0)
    out[ok & ~pos] = 1.0
    if pos.any():
        out[pos] = chi_square_sf(values[pos], np.broadcast_to(df, values.shape)[pos])
    return out


# ---------------------------------------------------------------------------
# statistic kernels (leading batch axes allowed)


def _mv(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def _dot(u, v):
    return np.einsum("...i,...i->...", u, v)


def _solve(M, v):
    return np.linalg.solve(M, v[..., None])[..., 0]


def bf_values(variant, n, lam, grad, g_hat, G, dbeta, S=None, Omega=None, Gplus=None):
    """Kernel for the seven bilinear-form statistics.

    ``lam`` (..., q) multipliers, ``grad`` (..., p) gradient of Q at the
    constrained estimate, ``g_hat`` (..., q) restriction at the unconstrained
    estimate, ``G`` (..., q, p), ``dbeta`` (..., p) unconstrained minus
    constrained estimate.
    """
    if variant in (2, 3, 5, 6) and Gplus is None:
        Gplus = moore_penrose(G)
    if variant in (1, 2, 3):
        if S is None or Omega is None:
            raise InputError(f"BF{variant} requires S and Omega")
        right = _solve(Omega, g_hat if variant < 3 else _mv(G, dbeta))
        left = lam if variant == 1 else _mv(np.swapaxes(Gplus, -1, -2), grad)
        return n * _dot(left, _mv(S, right))
    if variant == 4:
        return n * _dot(lam, g_hat)
    if variant == 5:
        return n * _dot(grad, _mv(Gplus, g_hat))
    if variant == 6:
        return n * _dot(grad, _mv(Gplus @ G, dbeta))
    if variant == 7:
        return n * _dot(grad, dbeta)
    raise InputError(f"BF variant must be in 1..7, got {variant}")


def wald_values(n, g_hat, Omega_hat):
    return n * _dot(g_hat, _solve(Omega_hat, g_hat))


def lm_values(n, lam, S, Omega):
    Sl = _mv(S, lam)
    return n * _dot(Sl, _solve(Omega, Sl))


def distance_values(n, q_hat, q_tilde):
    return 2.0 * n * (np.asarray(q_hat) - np.asarray(q_tilde))


# ---------------------------------------------------------------------------
# single-dataset API


@dataclass(frozen=True)
class TestStatistic:
    __test__ = False  # keep pytest from collecting this class

    name: str
    value: float
    df: int
    p_value: float
    hypothesis: str = ""
    warning: str = ""


@dataclass
class TestInputs:
    """Everything the statistics need, evaluated once.

    ``S`` and ``Omega`` belong to the constrained estimate; ``Omega_hat``
    is the Wald covariance at the unconstrained estimate (``Omega`` is used
    when it is absent).  ``information_equality`` asserts ``B = -A`` for the
    model, which BF4 to BF7 require.
    """

    __test__ = False

    n: int
    beta_hat: np.ndarray
    beta_tilde: np.ndarray
    multipliers: np.ndarray
    grad_tilde: np.ndarray
    q_hat: float
    q_tilde: float
    g_hat: np.ndarray
    G: np.ndarray
    S: Optional[np.ndarray] = None
    Omega: Optional[np.ndarray] = None
    Omega_hat: Optional[np.ndarray] = None
    information_equality: bool = True
    hypothesis: str = ""

    def __post_init__(self):
        self.beta_hat = np.atleast_1d(np.asarray(self.beta_hat, dtype=float))
        self.beta_tilde = np.atleast_1d(np.asarray(self.beta_tilde, dtype=float))
        self.multipliers = np.atleast_1d(np.asarray(self.multipliers, dtype=float))
        self.grad_tilde = np.atleast_1d(np.asarray(self.grad_tilde, dtype=float))
        self.g_hat = np.atleast_1d(np.asarray(self.g_hat, dtype=float))
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        p = self.beta_hat.size
        q = self.g_hat.size
        if (self.beta_tilde.size != p or self.grad_tilde.size != p
                or self.multipliers.size != q or self.G.shape != (q, p)):
            raise DimensionError("inconsistent dimensions in TestInputs")
        for name in ("S", "Omega", "Omega_hat"):
            M = getattr(self, name)
            if M is not None:
                M = np.atleast_2d(np.asarray(M, dtype=float))
                if M.shape != (q, q):
                    raise DimensionError(f"{name} must be {q} x {q}")
                setattr(self, name, M)

    @property
    def q(self):
        return self.g_hat.size


def _check_spd(M, name):
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(f"{name} is singular or not positive definite") from None


def _make(name, value, inp, warning=""):
    value = float(value)
    if value < 0 and not warning:
        warning = "negative"
    pv = float(p_values(value, inp.q))
    return TestStatistic(name, value, inp.q, pv, inp.hypothesis, warning)


def bf_statistic(variant, inp):
    """Bilinear-form statistic ``BF<variant>`` with a chi-square(q) p-value.

    Finite-sample values can be negative; they are reported as-is with the
    warning ``"negative"`` and a p-value of 1.
    """
    if variant not in range(1, 8):
        raise InputError(f"BF variant must be in 1..7, got {variant}")
    if variant >= 4 and not inp.information_equality:
        raise InputError(f"BF{variant} requires the information equality B = -A")
    if variant <= 3:
        if inp.S is None or inp.Omega is None:
            raise InputError(f"BF{variant} requires S and Omega")
        _check_spd(inp.Omega, "Omega")
    value = bf_values(variant, inp.n, inp.multipliers, inp.grad_tilde, inp.g_hat,
                      inp.G, inp.beta_hat - inp.beta_tilde, inp.S, inp.Omega)
    return _make(f"BF{variant}", value, inp)


def wald_statistic(inp):
    """``W = n g(b^)' Omega^-1 g(b^)`` with Omega evaluated at the unconstrained estimate."""
    Om = inp.Omega_hat if inp.Omega_hat is not None else inp.Omega
    if Om is None:
        raise InputError("Wald statistic requires Omega at the unconstrained estimate")
    _check_spd(Om, "Omega")
    return _make("W", wald_values(inp.n, inp.g_hat, Om), inp)


def lm_statistic(inp):
    """``LM = n lam' S Omega^-1 S lam``."""
    if inp.S is None or inp.Omega is None:
        raise InputError("LM statistic requires S and Omega")
    _check_spd(inp.Omega, "Omega")
    return _make("LM", lm_values(inp.n, inp.multipliers, inp.S, inp.Omega), inp)


def distance_statistic(inp):
    """``D = 2 n (Q(b^) - Q(b~))``.

    For the scaled NLS criterion this is ``(SSR(b~) - SSR(b^)) / scale``.

    Raises
    ------
    SolverOrderingError
        If ``D < -1e-8``: the constrained fit beat the unconstrained one.
    """
    value = float(distance_values(inp.n, inp.q_hat, inp.q_tilde))
    if value < -D_NEGATIVE_TOL:
        raise SolverOrderingError(
            f"distance statistic is negative ({value:.3g}); the unconstrained fit "
            "is not a maximizer"
        )
    return _make("D", value, inp, "negative" if value < 0 else "")


@dataclass
class TestConfig:
    """Options for :func:`run_all_tests`.

    ``covariance`` selects how B is estimated (``"information"`` sets
    ``B = -A``, ``"sandwich"`` uses the per-observation scores).  For NLS
    objectives the scale is re-estimated from the unconstrained fit as
    ``SSR / (n - p)`` (``SSR / n`` when ``scale_ddof`` is false) unless
    ``estimate_scale`` is false.
    """

    __test__ = False

    fit: FitOptions = field(default_factory=FitOptions)
    variants: tuple = (1, 2, 3, 4, 5, 6, 7)
    covariance: str = "information"
    estimate_scale: bool = True
    scale_ddof: bool = True
    information_equality: bool = True
    hypothesis: str = ""
    require_convergence: bool = True


def prepare_inputs(obj, restriction, config=None):
    """Fit both estimators and assemble :class:`TestInputs`.

    Returns ``(inputs, fit, constrained_fit, objective)`` where
    ``objective`` is the (possibly rescaled) objective used for the
    statistics.
    """
    config = config or TestConfig()
    is_nls = isinstance(obj, NlsObjective)
    fit_obj = obj.with_scale(1.0) if (is_nls and config.estimate_scale) else obj
    fit = fit_unconstrained(fit_obj, config.fit)
    cfit = fit_constrained(fit_obj, restriction, config.fit)
    if config.require_convergence and not (fit.converged and cfit.converged):
        which = "unconstrained" if not fit.converged else "constrained"
        raise ConvergenceError(f"{which} estimator did not converge", fit, cfit)

    if is_nls and config.estimate_scale:
        y = obj.dataset.response
        ssr = fit_obj.ssr(fit.beta)
        scale = nls_scale(ssr, obj.nobs, obj.n_params, config.scale_ddof, np.mean(y * y))
        stat_obj = obj.with_scale(float(scale))
    else:
        stat_obj = obj

    b_hat, b_tilde = fit.beta, cfit.beta
    g_hat, _ = eval_restriction(restriction, b_hat)
    _, G = eval_restriction(restriction, b_tilde)
    grad = stat_obj.gradient(b_tilde)
    lam = recover_multipliers(grad, G)
    comp_t = compute_covariance_components(stat_obj, restriction, b_tilde, config.covariance)
    comp_h = compute_covariance_components(stat_obj, restriction, b_hat, config.covariance)
    inputs = TestInputs(
        n=stat_obj.nobs, beta_hat=b_hat, beta_tilde=b_tilde, multipliers=lam,
        grad_tilde=grad, q_hat=stat_obj.value(b_hat), q_tilde=stat_obj.value(b_tilde),
        g_hat=g_hat, G=G, S=comp_t.S, Omega=comp_t.Omega, Omega_hat=comp_h.Omega,
        information_equality=config.information_equality,
        hypothesis=config.hypothesis or restriction.name,
    )
    return inputs, fit, cfit, stat_obj


def run_all_tests(obj, restriction, data=None, config=None):
    """Fit both estimators and compute the requested BF variants, W, LM and D.

    Parameters
    ----------
    obj : objective or str
        An objective, or a registered mean-function identifier combined
        with ``data``.
    restriction : Restriction or str
        A restriction or a registered identifier without parameters.
    data : Dataset, optional
    config : TestConfig, optional

    Returns
    -------
    list of TestStatistic
        BF variants in ascending order, then W, LM and D.
    """
    config = config or TestConfig()
    if isinstance(obj, str):
        if data is None:
            raise InputError("a dataset is required when the model is given by name")
        obj = NlsObjective(data, obj)
    if isinstance(restriction, str):
        restriction = get_restriction(restriction)
    inputs, *_ = prepare_inputs(obj, restriction, config)
    out = [bf_statistic(v, inputs) for v in sorted(config.variants)]
    out += [wald_statistic(inputs), lm_statistic(inputs), distance_statistic(inputs)]
    return out
