"""Objective functions Q_n(beta) with gradients and Hessians.

All objectives are *maximized*.  Three families ship with the package:

* :class:`NlsObjective`, the scaled nonlinear least squares criterion
  ``-SSR(beta) / (2 * scale * n)`` built on a registered mean function,
* :class:`QuadraticObjective`, the GMM-type criterion ``-f'W^{-1}f / 2``,
* :class:`MeanLogLikelihood`, the average of per-observation log-densities.

Mean functions are vectorized over leading batch axes so the Monte Carlo
driver can evaluate many replications at once with the same code.
"""

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    InputError,
    NotPositiveDefiniteError,
    SingularMatrixError,
)
from .numdiff import GRADIENT_STEP, numeric_gradient, numeric_hessian, numeric_jacobian

__all__ = [
    "Dataset",
    "read_dataset_csv",
    "MeanFunction",
    "MEAN_FUNCTIONS",
    "get_mean_function",
    "ObjectiveEvaluation",
    "NlsObjective",
    "QuadraticObjective",
    "MeanLogLikelihood",
    "nls_residuals",
    "nls_evaluate_batch",
    "nls_scores_batch",
    "eval_nls",
    "eval_quadratic",
]


# ---------------------------------------------------------------------------
# Data


@dataclass(frozen=True)
class Dataset:
    """Response vector and regressor matrix (one row per observation)."""

    response: np.ndarray
    regressors: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.response, dtype=float)
        X = np.asarray(self.regressors, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionError(
                f"response {y.shape} and regressors {X.shape} do not conform"
            )
        if y.size < 1:
            raise InputError("dataset has no observations")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InputError("dataset contains non-finite entries")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "regressors", X)

    @property
    def n(self):
        return self.response.shape[0]


def read_dataset_csv(path):
    """Read a dataset: header row, response in the first column.

    Raises
    ------
    InputError
        On an empty file, ragged rows or unparseable numbers; the message
        names the file and the offending line.
    """
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or not any(c.strip() for c in header):
                raise InputError(f"{path}: empty file (a header row is required)")
            width = len(header)
            if width < 1:
                raise InputError(f"{path}: header has no columns")
            for row in reader:
                if not row or not any(c.strip() for c in row):
                    continue
                if len(row) != width:
                    raise InputError(
                        f"{path}, line {reader.line_num}: expected {width} fields, "
                        f"got {len(row)}"
                    )
                try:
                    rows.append([float(c) for c in row])
                except ValueError as exc:
                    raise InputError(f"{path}, line {reader.line_num}: {exc}") from None
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise InputError(f"{path}: not valid UTF-8") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, 0], arr[:, 1:])


# ---------------------------------------------------------------------------
# Mean functions


@dataclass(frozen=True)
class MeanFunction:
    """Regression function m(x_i, beta) with analytic derivatives.

    ``value``, ``jacobian`` and ``hessian`` take ``X`` of shape
    ``(..., n, k)`` and ``beta`` of shape ``(..., p)`` and return arrays of
    shape ``(..., n)``, ``(..., n, p)`` and ``(..., n, p, p)``.
    """

    name: str
    n_params: Callable[[int], int]
    value: Callable
    jacobian: Callable
    hessian: Optional[Callable] = None
    n_regressors: Optional[int] = None


def _linear_value(X, beta):
    return np.einsum("...nk,...k->...n", X, beta)


def _linear_jacobian(X, beta):
    return np.broadcast_to(X, np.broadcast_shapes(X.shape, beta.shape[:-1] + X.shape[-2:]))


def _linear_hessian(X, beta):
    shape = np.broadcast_shapes(X.shape[:-1], beta.shape[:-1] + X.shape[-2:-1])
    return np.zeros(shape + (beta.shape[-1], beta.shape[-1]))


def _le3_value(X, beta):
    b = beta[..., None, :]
    return b[..., 0] + X[..., 0] * b[..., 1] + np.exp(X[..., 1] * b[..., 2])


def _le3_jacobian(X, beta):
    b = beta[..., None, :]
    e = np.exp(X[..., 1] * b[..., 2])
    x2 = X[..., 0]
    shape = np.broadcast_shapes(x2.shape, e.shape)
    return np.stack(
        [np.ones(shape), np.broadcast_to(x2, shape), X[..., 1] * e], axis=-1
    )


def _le3_hessian(X, beta):
    b = beta[..., None, :]
    x3 = X[..., 1]
    d33 = x3 * x3 * np.exp(x3 * b[..., 2])
    H = np.zeros(d33.shape + (3, 3))
    H[..., 2, 2] = d33
    return H


MEAN_FUNCTIONS = {
    "linear": MeanFunction(
        "linear", lambda k: k, _linear_value, _linear_jacobian, _linear_hessian
    ),
    # y = b1 + x2 * b2 + exp(x3 * b3); regressor columns are (x2, x3)
    "linear2-exp3": MeanFunction(
        "linear2-exp3", lambda k: 3, _le3_value, _le3_jacobian, _le3_hessian,
        n_regressors=2,
    ),
}


def get_mean_function(name):
    if isinstance(name, MeanFunction):
        return name
    try:
        return MEAN_FUNCTIONS[name]
    except KeyError:
        raise InputError(
            f"unknown mean function {name!r}; known: {sorted(MEAN_FUNCTIONS)}"
        ) from None


# ---------------------------------------------------------------------------
# Objectives


@dataclass(frozen=True)
class ObjectiveEvaluation:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    exact_curvature: bool = True


def _as_point(beta, p):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (p,):
        raise DimensionError(f"parameter has shape {beta.shape}, expected ({p},)")
    if not np.all(np.isfinite(beta)):
        raise DomainError("parameter vector has non-finite entries")
    return beta


def nls_residuals(y, X, mean, beta, scale):
    """Weighted residuals and their Jacobian for the scaled NLS criterion.

    Returns ``(r, J)`` with ``r = (y - m) / sqrt(scale * n)`` and
    ``J = dr/dbeta``, so that ``Q_n = -0.5 * ||r||^2``.  Broadcasts over
    leading batch axes of ``y``, ``X`` and ``beta``.
    """
    n = y.shape[-1]
    w = 1.0 / np.sqrt(scale * n)
    w = np.asarray(w)[..., None]
    r = (y - mean.value(X, beta)) * w
    J = -mean.jacobian(X, beta) * w[..., None]
    return r, J


def nls_evaluate_batch(y, X, mean, beta, scale, exact=True):
    """Value, gradient and Hessian of the scaled NLS criterion, batched.

    ``scale`` may be an array over the batch axis.  Returns
    ``(value (...,), gradient (..., p), hessian (..., p, p))``.
    """
    scale = np.asarray(scale, dtype=float)
    r, J = nls_residuals(y, X, mean, beta, scale)
    value = -0.5 * np.einsum("...i,...i->...", r, r)
    grad = -np.einsum("...ip,...i->...p", J, r)
    H = -np.swapaxes(J, -1, -2) @ J
    if exact and mean.hessian is not None:
        w = 1.0 / np.sqrt(scale * y.shape[-1])
        H = H + w[..., None, None] * np.einsum("...i,...ijk->...jk", r, mean.hessian(X, beta))
    return value, grad, 0.5 * (H + np.swapaxes(H, -1, -2))


def nls_scores_batch(y, X, mean, beta, scale):
    """Per-observation score contributions ``F_i (y_i - m_i) / scale``, (..., n, p)."""
    scale = np.asarray(scale, dtype=float)
    resid = (y - mean.value(X, beta)) / scale[..., None]
    return mean.jacobian(X, beta) * resid[..., None]


class NlsObjective:
    """Scaled nonlinear least squares, ``Q_n = -SSR / (2 * scale * n)``.

    Parameters
    ----------
    dataset : Dataset
    mean : str or MeanFunction
        Registered identifier such as ``"linear"`` or ``"linear2-exp3"``.
    scale : float
        Error-variance estimate; must be positive.
    scores_available : bool
        Whether per-observation scores are exposed, which switches the
        score-variance estimate from information equality to the sample
        covariance of the scores.
    exact_hessian : bool
        Include the residual-curvature term when the mean function has
        second derivatives.  ``False`` gives the Gauss-Newton Hessian.
    """

    def __init__(self, dataset, mean="linear2-exp3", scale=1.0,
                 scores_available=True, exact_hessian=True):
        self.dataset = dataset
        self.mean = get_mean_function(mean)
        k = dataset.regressors.shape[1]
        if self.mean.n_regressors is not None and k != self.mean.n_regressors:
            raise DimensionError(
                f"mean function {self.mean.name!r} takes {self.mean.n_regressors} "
                f"regressors, dataset has {k}"
            )
        if not (np.isfinite(scale) and scale > 0):
            raise InputError(f"scale must be positive, got {scale}")
        self.scale = float(scale)
        self.scores_available = scores_available
        self.exact_hessian = exact_hessian

    @property
    def nobs(self):
        return self.dataset.n

    @property
    def n_params(self):
        return self.mean.n_params(self.dataset.regressors.shape[1])

    def with_scale(self, scale):
        return NlsObjective(self.dataset, self.mean, scale,
                            self.scores_available, self.exact_hessian)

    def residuals(self, beta):
        beta = _as_point(beta, self.n_params)
        with np.errstate(over="ignore", invalid="ignore"):
            r, J = nls_residuals(self.dataset.response, self.dataset.regressors,
                                 self.mean, beta, self.scale)
        if not np.all(np.isfinite(r)):
            raise DomainError("non-finite residuals")
        return r, J

    def ssr(self, beta):
        r, _ = self.residuals(beta)
        return float(r @ r) * self.scale * self.nobs

    def value(self, beta):
        r, _ = self.residuals(beta)
        return -0.5 * float(r @ r)

    def gradient(self, beta):
        r, J = self.residuals(beta)
        return -J.T @ r

    def hessian(self, beta):
        return self.evaluate(beta).hessian

    def evaluate(self, beta):
        beta = _as_point(beta, self.n_params)
        r, J = self.residuals(beta)
        H = -J.T @ J
        exact = self.exact_hessian and self.mean.hessian is not None
        if exact:
            # r carries 1/sqrt(scale*n); the curvature term needs 1/(scale*n)
            w = 1.0 / np.sqrt(self.scale * self.nobs)
            d2m = self.mean.hessian(self.dataset.regressors, beta)
            H = H + w * np.einsum("i,ijk->jk", r, d2m)
        H = 0.5 * (H + H.T)
        return ObjectiveEvaluation(-0.5 * float(r @ r), -J.T @ r, H, exact)

    def scores(self, beta):
        """Per-observation gradients of ``-(y_i - m_i)^2 / (2 scale)``, (n, p)."""
        beta = _as_point(beta, self.n_params)
        X = self.dataset.regressors
        resid = self.dataset.response - self.mean.value(X, beta)
        return self.mean.jacobian(X, beta) * (resid / self.scale)[:, None]


class QuadraticObjective:
    """GMM-type criterion ``Q_n = -0.5 * f_n' W^{-1} f_n``.

    Parameters
    ----------
    moments : callable
        ``beta -> f_n(beta)``, shape (m,).
    moment_jacobian : callable
        ``beta -> F_n(beta)``, shape (m, p).
    weight : array_like, shape (m, m)
        Symmetric positive definite weight matrix.
    nobs : int
        Sample size used by the test statistics.
    n_params : int
    moment_hessian : callable, optional
        ``beta -> d2 f_n / dbeta dbeta'``, shape (m, p, p).  When absent the
        array-multiplication term of the Hessian is obtained by central
        differences of ``F_n(beta)' v`` with ``v = W^{-1} f_n(beta)`` held
        fixed.
    """

    scores_available = False

    def __init__(self, moments, moment_jacobian, weight, nobs, n_params,
                 moment_hessian=None):
        W = np.asarray(weight, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DimensionError(f"weight must be square, got {W.shape}")
        if not np.allclose(W, W.T, rtol=1e-12, atol=0.0):
            raise InputError("weight matrix is not symmetric")
        eig = np.linalg.eigvalsh(W)
        if eig[0] <= 0:
            raise NotPositiveDefiniteError("weight matrix is not positive definite")
        if eig[-1] / eig[0] > 1e12:
            raise SingularMatrixError(
                f"weight matrix is numerically singular (condition {eig[-1] / eig[0]:.3g})"
            )
        if W.shape[0] < n_params:
            raise DimensionError("need at least as many moments as parameters")
        self.moments = moments
        self.moment_jacobian = moment_jacobian
        self.weight = W
        self._chol = np.linalg.cholesky(W)
        self.nobs = int(nobs)
        self.n_params = int(n_params)
        self.moment_hessian = moment_hessian

    def _winv(self, v):
        L = self._chol
        return np.linalg.solve(L.T, np.linalg.solve(L, v))

    def _parts(self, beta):
        beta = _as_point(beta, self.n_params)
        f = np.asarray(self.moments(beta), dtype=float)
        F = np.asarray(self.moment_jacobian(beta), dtype=float)
        if f.shape != (self.weight.shape[0],) or F.shape != (f.size, self.n_params):
            raise DimensionError("moment function or Jacobian has the wrong shape")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(F))):
            raise DomainError("non-finite moments")
        return beta, f, F

    def value(self, beta):
        _, f, _ = self._parts(beta)
        return -0.5 * float(f @ self._winv(f))

    def gradient(self, beta):
        _, f, F = self._parts(beta)
        return -F.T @ self._winv(f)

    def hessian(self, beta):
        return self.evaluate(beta).hessian

    def _array_term(self, beta, v):
        if self.moment_hessian is not None:
            return np.einsum("i,ijk->jk", v, np.asarray(self.moment_hessian(beta)))
        p = beta.size
        steps = GRADIENT_STEP * np.maximum(1.0, np.abs(beta))
        T = np.empty((p, p))
        for k in range(p):
            e = np.zeros(p)
            e[k] = steps[k]
            Fp = np.asarray(self.moment_jacobian(beta + e), dtype=float)
            Fm = np.asarray(self.moment_jacobian(beta - e), dtype=float)
            T[:, k] = (Fp - Fm).T @ v / (2.0 * steps[k])
        return T

    def evaluate(self, beta):
        beta, f, F = self._parts(beta)
        v = self._winv(f)
        WF = self._winv(F)
        H = -self._array_term(beta, v) - F.T @ WF
        H = 0.5 * (H + H.T)
        return ObjectiveEvaluation(-0.5 * float(f @ v), -F.T @ v, H, True)


class MeanLogLikelihood:
    """Average log-likelihood ``Q_n = (1/n) sum_i log f(w_i; beta)``.

    ``loglik(beta)`` must return the n per-observation log-densities.  The
    optional ``score(beta)`` returns their gradients as an (n, p) array and
    ``hessian(beta)`` the (p, p) Hessian of the average; missing
    derivatives fall back to central differences.
    """

    def __init__(self, loglik, nobs, n_params, score=None, hessian=None):
        self.loglik = loglik
        self.nobs = int(nobs)
        self.n_params = int(n_params)
        self._score = score
        self._hessian = hessian
        self.scores_available = score is not None

    def value(self, beta):
        beta = _as_point(beta, self.n_params)
        ll = np.asarray(self.loglik(beta), dtype=float)
        if not np.all(np.isfinite(ll)):
            raise DomainError("non-finite log-likelihood")
        return float(ll.mean())

    def scores(self, beta):
        beta = _as_point(beta, self.n_params)
        return np.asarray(self._score(beta), dtype=float)

    def gradient(self, beta):
        if self._score is not None:
            return self.scores(beta).mean(axis=0)
        return numeric_gradient(self.value, beta)

    def hessian(self, beta):
        beta = _as_point(beta, self.n_params)
        if self._hessian is not None:
            H = np.asarray(self._hessian(beta), dtype=float)
        elif self._score is not None:
            H = numeric_jacobian(self.gradient, beta)
        else:
            H = numeric_hessian(self.value, beta)
        return 0.5 * (H + H.T)

    def evaluate(self, beta):
        return ObjectiveEvaluation(
            self.value(beta), self.gradient(beta), self.hessian(beta),
            self._hessian is not None,
        )


def eval_nls(obj, beta):
    """Value, gradient and Hessian of an :class:`NlsObjective`."""
    return obj.evaluate(beta)


def eval_quadratic(obj, beta):
    """Value, gradient and Hessian of a :class:`QuadraticObjective`."""
    return obj.evaluate(beta)
