"""Central finite differences.

Fallback differentiation for objectives and restrictions that do not
provide analytic derivatives, and the independent oracle used by the test
suite to check the analytic ones.
"""

import numpy as np

from .errors import DomainError

EPS = np.finfo(float).eps
GRADIENT_STEP = EPS ** (1.0 / 3.0)
HESSIAN_STEP = EPS ** 0.25


def _steps(beta, h):
    return h * np.maximum(1.0, np.abs(beta))


def _checked(value, j, what="function"):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise DomainError(f"{what} is not finite when perturbing coordinate {j}")
    return value


def numeric_gradient(f, beta, h=GRADIENT_STEP):
    """Central-difference gradient of a scalar function.

    Parameters
    ----------
    f : callable
        Scalar function of a 1-d parameter array.
    beta : array_like, shape (p,)
        Evaluation point.
    h : float
        Relative step; coordinate ``j`` uses ``h * max(1, |beta_j|)``.

    Returns
    -------
    ndarray, shape (p,)
    """
    beta = np.asarray(beta, dtype=float)
    steps = _steps(beta, h)
    grad = np.empty(beta.size)
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = steps[j]
        fp = _checked(f(beta + e), j)
        fm = _checked(f(beta - e), j)
        grad[j] = (fp - fm) / (2.0 * steps[j])
    return grad


def numeric_jacobian(f, beta, h=GRADIENT_STEP):
    """Central-difference Jacobian of a vector function, shape (q, p)."""
    beta = np.asarray(beta, dtype=float)
    steps = _steps(beta, h)
    cols = []
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = steps[j]
        fp = _checked(f(beta + e), j)
        fm = _checked(f(beta - e), j)
        cols.append((fp - fm) / (2.0 * steps[j]))
    return np.stack(cols, axis=-1)


def numeric_hessian(f, beta, h=HESSIAN_STEP):
    """Central second differences of a scalar function, symmetrized.

    The diagonal uses the three-point stencil, off-diagonal entries the
    four-point cross stencil.  The result is returned as ``(H + H.T) / 2``.
    """
    beta = np.asarray(beta, dtype=float)
    p = beta.size
    steps = _steps(beta, h)
    f0 = _checked(f(beta), -1)
    H = np.empty((p, p))
    for j in range(p):
        ej = np.zeros(p)
        ej[j] = steps[j]
        fp = _checked(f(beta + ej), j)
        fm = _checked(f(beta - ej), j)
        H[j, j] = (fp - 2.0 * f0 + fm) / steps[j] ** 2
        for k in range(j + 1, p):
            ek = np.zeros(p)
            ek[k] = steps[k]
            fpp = _checked(f(beta + ej + ek), j)
            fpm = _checked(f(beta + ej - ek), j)
            fmp = _checked(f(beta - ej + ek), j)
            fmm = _checked(f(beta - ej - ek), j)
            H[j, k] = H[k, j] = (fpp - fpm - fmp + fmm) / (4.0 * steps[j] * steps[k])
    return 0.5 * (H + H.T)
