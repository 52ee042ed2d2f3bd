"""Batched Levenberg-Marquardt, BFGS and augmented-Lagrangian kernels.

Every kernel works on a leading batch axis of independent problems.  Each
problem carries its own damping, penalty and multiplier state and is
frozen once it stops, so a problem's trajectory never depends on which
other problems share its batch.
"""

from dataclasses import dataclass

import numpy as np

# damping limits for Levenberg-Marquardt
NU_INIT = 1e-3
NU_MAX = 1e16


@dataclass
class BatchResult:
    beta: np.ndarray        # (B, p)
    cost: np.ndarray        # (B,) minimized criterion
    grad_norm: np.ndarray   # (B,) max-norm of the (projected) gradient
    iterations: np.ndarray  # (B,)
    converged: np.ndarray   # (B,) bool
    finite_start: np.ndarray


def _project(beta, bounds):
    if bounds is None:
        return beta
    lo, hi = bounds
    return np.clip(beta, lo, hi)


def _projected_grad(grad, beta, bounds):
    if bounds is None:
        return grad
    lo, hi = bounds
    g = grad.copy()
    # minimization gradient: a positive component at the lower bound (or a
    # negative one at the upper bound) points out of the box
    g[(beta <= lo) & (g > 0)] = 0.0
    g[(beta >= hi) & (g < 0)] = 0.0
    return g


def _cost_of(r):
    with np.errstate(over="ignore", invalid="ignore"):
        c = 0.5 * np.einsum("...i,...i->...", r, r)
    return np.where(np.isfinite(c), c, np.inf)


def levenberg_marquardt(fun, beta0, gtol=1e-8, xtol=1e-12, max_iter=200,
                        bounds=None):
    """Minimize ``0.5 * ||r(beta)||^2`` for a batch of problems.

    Parameters
    ----------
    fun : callable
        ``fun(beta, idx) -> (r, J)`` evaluates residuals ``(k, m)`` and their
        Jacobian ``(k, m, p)`` for batch members ``idx`` at ``beta`` (k, p).
        Points outside the domain must give non-finite residuals.
    beta0 : ndarray, shape (B, p)

    Notes
    -----
    Marquardt scaling of the damping term.  A problem stops on an accepted
    step shorter than ``xtol * (|beta| + xtol)``, on a rejected step when its
    gradient is already within ``gtol``, when the damping saturates, or after
    ``max_iter`` iterations.  ``converged`` means max-norm gradient
    ``<= gtol`` at the returned point.
    """
    beta = _project(np.array(beta0, dtype=float), bounds)
    B, p = beta.shape
    idx = np.arange(B)
    r, J = fun(beta, idx)
    cost = _cost_of(r)
    finite_start = np.isfinite(cost)
    grad = np.einsum("bmp,bm->bp", J, np.where(np.isfinite(r), r, 0.0))
    gnorm = np.max(np.abs(_projected_grad(grad, beta, bounds)), axis=-1)
    nu = np.full(B, NU_INIT)
    iters = np.zeros(B, dtype=int)
    active = finite_start & ~(gnorm == 0.0)
    eye = np.eye(p)

    for _ in range(max_iter):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        Ja = J[a]
        H = np.swapaxes(Ja, -1, -2) @ Ja
        g = grad[a]
        d = np.diagonal(H, axis1=-2, axis2=-1)
        d = np.maximum(d, 1e-12 * np.max(d, axis=-1, keepdims=True) + 1e-300)
        A = H + (nu[a][:, None] * d)[:, :, None] * eye
        try:
            step = -np.linalg.solve(A, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([-np.linalg.lstsq(Ai, gi, rcond=None)[0]
                             for Ai, gi in zip(A, g)])
        trial = _project(beta[a] + step, bounds)
        step = trial - beta[a]
        rt, Jt = fun(trial, a)
        ct = _cost_of(rt)
        pred = -(np.einsum("bp,bp->b", g, step)
                 + 0.5 * np.einsum("bp,bpq,bq->b", step, H, step))
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = (cost[a] - ct) / pred
        accept = np.isfinite(ct) & (ct < cost[a])
        iters[a] += 1

        acc = a[accept]
        if acc.size:
            beta[acc] = trial[accept]
            r[acc] = rt[accept]
            J[acc] = Jt[accept]
            cost[acc] = ct[accept]
            grad[acc] = np.einsum("bmp,bm->bp", Jt[accept], rt[accept])
            rr = np.clip(rho[accept], 0.0, 1.0)
            nu[acc] *= np.maximum(1.0 / 3.0, 1.0 - (2.0 * rr - 1.0) ** 3)
            nu[acc] = np.maximum(nu[acc], 1e-15)
        rej = a[~accept]
        nu[rej] *= 4.0

        gnorm[a] = np.max(np.abs(_projected_grad(grad[a], beta[a], bounds)), axis=-1)
        small = np.max(np.abs(step), axis=-1) <= xtol * (
            np.max(np.abs(beta[a]), axis=-1) + xtol)
        stop = (accept & small) | (~accept & (gnorm[a] <= gtol)) | (nu[a] > NU_MAX)
        stop |= gnorm[a] == 0.0
        active[a[stop]] = False

    if bounds is None:
        _gauss_newton_polish(fun, beta, r, J, cost, grad, gnorm, finite_start)
    converged = finite_start & (gnorm <= gtol)
    return BatchResult(beta, cost, gnorm, iters, converged, finite_start)


def batched_solve(A, b):
    """``solve(A, b)`` over a stack; singular members fall back to lstsq."""
    try:
        return np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.stack([np.linalg.lstsq(Ai, bi, rcond=None)[0] for Ai, bi in zip(A, b)])


def _gauss_newton_polish(fun, beta, r, J, cost, grad, gnorm, live, steps=3):
    # Once cost differences fall below rounding, damping can no longer make
    # progress; undamped steps accepted on the gradient norm finish the job.
    # Arrays are updated in place.
    for _ in range(steps):
        a = np.flatnonzero(live & np.isfinite(gnorm) & (gnorm > 0))
        if a.size == 0:
            return
        Ja = J[a]
        with np.errstate(all="ignore"):
            step = -batched_solve(np.swapaxes(Ja, -1, -2) @ Ja, grad[a])
            trial = beta[a] + step
            rt, Jt = fun(trial, a)
            ct = _cost_of(rt)
            gt = np.einsum("bmp,bm->bp", Jt, rt)
            gn = np.max(np.abs(gt), axis=-1)
        slack = 8 * np.finfo(float).eps * np.maximum(cost[a], 1e-300)
        better = np.isfinite(ct) & (ct <= cost[a] + slack) & (gn < gnorm[a])
        if not better.any():
            return
        b = a[better]
        beta[b], r[b], J[b] = trial[better], rt[better], Jt[better]
        cost[b], grad[b], gnorm[b] = ct[better], gt[better], gn[better]


def bfgs(fun, beta0, gtol=1e-8, xtol=1e-12, max_iter=200, bounds=None):
    """Minimize a smooth scalar function with BFGS and Armijo backtracking.

    ``fun(beta) -> (value, gradient)`` for a single problem; non-finite
    values are treated as infeasible and trigger backtracking.
    Returns a :class:`BatchResult` with a batch of one.
    """
    x = _project(np.array(beta0, dtype=float), bounds)
    p = x.size
    f, g = fun(x)
    finite_start = bool(np.isfinite(f))
    Hinv = np.eye(p)
    it = 0
    first = True
    while finite_start and it < max_iter:
        gp = _projected_grad(g, x, bounds)
        if np.max(np.abs(gp)) <= gtol:
            break
        d = -Hinv @ g
        if g @ d >= 0:
            Hinv = np.eye(p)
            d = -g
        t = 1.0
        accepted = False
        for _ in range(60):
            xn = _project(x + t * d, bounds)
            fn, gn = fun(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * (g @ (xn - x)):
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            break
        s = xn - x
        y = gn - g
        x, f, g = xn, fn, gn
        sy = s @ y
        if sy > 1e-300:
            if first:
                Hinv = (sy / (y @ y)) * np.eye(p)
                first = False
            rho = 1.0 / sy
            V = np.eye(p) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        if np.max(np.abs(s)) <= xtol * (np.max(np.abs(x)) + xtol):
            break
    gnorm = np.max(np.abs(_projected_grad(g, x, bounds))) if finite_start else np.inf
    return BatchResult(
        x[None, :], np.array([f]), np.array([gnorm]), np.array([it]),
        np.array([finite_start and gnorm <= gtol]), np.array([finite_start]),
    )


@dataclass
class ALResult:
    beta: np.ndarray          # (B, p)
    violation: np.ndarray     # (B,) max-norm of g at beta
    outer_iterations: np.ndarray
    penalty: np.ndarray
    inner_ok: np.ndarray      # last inner solve converged
    failed: np.ndarray        # penalty blow-up or domain failure


def augmented_lagrangian(inner, cons, beta0, q, ctol=1e-10, max_outer=50,
                         mu0=10.0, mu_growth=10.0, shrink=0.25, mu_max=1e12):
    """Outer loop of the augmented-Lagrangian method, batched.

    Parameters
    ----------
    inner : callable
        ``inner(beta, lam, mu, idx) -> (beta_new, ok)`` approximately
        minimizes ``-Q(beta) + lam'g(beta) + mu/2 ||g(beta)||^2`` for batch
        members ``idx``; ``ok`` reports whether the Lagrangian is stationary
        at ``beta_new``.
    cons : callable
        ``cons(beta, idx) -> g`` with shape ``(k, q)``; non-finite outside the
        domain of the restriction.

    The multiplier estimate is updated as ``lam += mu * g``.  The penalty
    grows by ``mu_growth`` whenever ``||g||_inf`` fails to shrink by the
    factor ``shrink``.
    """
    beta = np.array(beta0, dtype=float)
    B = beta.shape[0]
    lam = np.zeros((B, q))
    mu = np.full(B, float(mu0))
    prev = np.full(B, np.inf)
    viol = np.full(B, np.inf)
    outer = np.zeros(B, dtype=int)
    inner_ok = np.zeros(B, dtype=bool)
    failed = np.zeros(B, dtype=bool)
    active = np.ones(B, dtype=bool)

    for _ in range(max_outer):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        b_new, ok = inner(beta[a], lam[a], mu[a], a)
        beta[a] = b_new
        inner_ok[a] = ok
        g = cons(b_new, a)
        v = np.max(np.abs(g), axis=-1)
        bad = ~np.isfinite(v)
        v = np.where(bad, np.inf, v)
        viol[a] = v
        outer[a] += 1
        lam[a] += np.where(bad[:, None], 0.0, mu[a][:, None] * g)
        done = (v <= ctol) & ok
        # at machine precision the violation cannot shrink further
        grow = ~done & (v > ctol) & (v > shrink * prev[a])
        prev[a] = v
        mu[a[grow]] *= mu_growth
        blown = mu[a] > mu_max
        failed[a[bad | blown]] = True
        active[a[done | bad | blown]] = False

    return ALResult(beta, viol, outer, mu, inner_ok, failed)
