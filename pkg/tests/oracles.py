"""Independent reference computations used by the tests.

Nothing here imports the package under test except for data containers;
each oracle uses a different algorithm from the production code path.
"""

import math

import numpy as np
from scipy import integrate, optimize


def exp_model(beta, x2, x3):
    return beta[0] + x2 * beta[1] + np.exp(x3 * beta[2])


def ssr_exp_model(beta, y, x2, x3):
    r = y - exp_model(beta, x2, x3)
    return float(r @ r)


def grid_then_polish(y, x2, x3, lo=0.0, hi=2.0, step=0.05, refinements=500):
    """Brute-force least squares for the exponential model.

    Evaluates SSR on a regular grid over ``[lo, hi]^3`` and then applies
    ``refinements`` one-dimensional Brent minimizations, cycling through
    the coordinates.
    """
    g = np.arange(lo, hi + step / 2, step)
    b1, b2, b3 = np.meshgrid(g, g, g, indexing="ij")
    pts = np.stack([b1.ravel(), b2.ravel(), b3.ravel()], axis=-1)
    best, best_val = None, np.inf
    for chunk in np.array_split(pts, 64):
        m = (chunk[:, None, 0] + chunk[:, None, 1] * x2
             + np.exp(chunk[:, None, 2] * x3))
        vals = np.sum((y - m) ** 2, axis=1)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best, best_val = chunk[i].copy(), vals[i]
    beta = best
    for k in range(refinements):
        j = k % 3

        def f(t, j=j):
            b = beta.copy()
            b[j] = t
            return ssr_exp_model(b, y, x2, x3)

        res = optimize.minimize_scalar(f, bracket=(beta[j] - step, beta[j] + step),
                                       method="brent", options={"xtol": 1e-14})
        if res.fun <= ssr_exp_model(beta, y, x2, x3):
            beta[j] = res.x
    return beta


def eliminate_h0(y, x2, x3, start=(1.0, 1.0)):
    """Constrained fit under beta2 * beta3 = 1 by substituting beta2 = 1/beta3.

    Solves the reduced two-parameter problem with SciPy's trust-region
    least squares.  Returns the full parameter vector.
    """
    def resid(t):
        return y - (t[0] + x2 / t[1] + np.exp(x3 * t[1]))

    res = optimize.least_squares(resid, np.asarray(start, dtype=float),
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, method="lm")
    b1, b3 = res.x
    return np.array([b1, 1.0 / b3, b3])


def ols(X, y):
    Q, R = np.linalg.qr(X)
    return np.linalg.solve(R, Q.T @ y)


def restricted_ols(X, y, R, r):
    """Closed-form restricted least squares."""
    XtXi = np.linalg.inv(X.T @ X)
    b = XtXi @ X.T @ y
    return b - XtXi @ R.T @ np.linalg.solve(R @ XtXi @ R.T, R @ b - r)


def chi2_cdf_quadrature(x, df):
    """Chi-square CDF by adaptive quadrature of the density.

    The substitution ``x = t^2`` removes the singularity at the origin
    for ``df = 1``.  Upper-tail integration is used past the mode so that
    values close to one keep full absolute precision.
    """
    if x <= 0:
        return 0.0
    k = df / 2.0
    logc = math.log(2.0) - k * math.log(2.0) - math.lgamma(k)

    def dens_t(t):
        return math.exp(logc + (df - 1) * math.log(t) - t * t / 2.0) if t > 0 else (
            math.exp(logc) if df == 1 else 0.0)

    root = math.sqrt(x)
    if x < max(df - 2, 0) + 1:
        val, _ = integrate.quad(dens_t, 0.0, root, epsabs=1e-15, epsrel=1e-13, limit=200)
        return val
    upper, _ = integrate.quad(dens_t, root, np.inf, epsabs=1e-15, epsrel=1e-13, limit=200)
    return 1.0 - upper
