"""Restrictions g(beta) = 0, their Jacobians, and the Moore-Penrose inverse."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, DomainError, InputError, RankDeficiencyError
from .numdiff import numeric_jacobian

__all__ = [
    "Restriction",
    "RESTRICTIONS",
    "get_restriction",
    "linear_restriction",
    "eval_restriction",
    "moore_penrose",
    "moore_penrose_batch",
    "projection",
    "RANK_RTOL",
]

RANK_RTOL = 1e-10
# |beta3| below this is treated as the pole of beta2 - delta / beta3
POLE_TOL = 1e-8


@dataclass(frozen=True)
class Restriction:
    """Restriction function ``g: R^p -> R^q`` with optional analytic Jacobian.

    ``g`` and ``jacobian`` accept parameter arrays of shape ``(..., p)`` and
    return ``(..., q)`` and ``(..., q, p)``.  ``domain``, when given,
    returns a boolean mask of points where ``g`` is defined.
    """

    name: str
    g: Callable
    q: int
    jacobian: Optional[Callable] = None
    domain: Optional[Callable] = None

    def in_domain(self, beta):
        if self.domain is None:
            return np.ones(np.shape(beta)[:-1], dtype=bool)
        return self.domain(beta)

    def G(self, beta):
        if self.jacobian is not None:
            return self.jacobian(beta)
        beta = np.asarray(beta, dtype=float)
        if beta.ndim == 1:
            return numeric_jacobian(self.g, beta)
        flat = beta.reshape(-1, beta.shape[-1])
        out = np.stack([numeric_jacobian(self.g, b) for b in flat])
        return out.reshape(beta.shape[:-1] + out.shape[-2:])


def _away_from_pole(beta):
    return np.abs(beta[..., 2]) > POLE_TOL


def _h0a(delta):
    def g(beta):
        return (beta[..., 1] - delta / beta[..., 2])[..., None]

    def jac(beta):
        b3 = beta[..., 2]
        zero = np.zeros_like(b3)
        return np.stack([zero, np.ones_like(b3), delta / (b3 * b3)], axis=-1)[..., None, :]

    return g, jac


def _h0b(delta):
    def g(beta):
        return (beta[..., 1] * beta[..., 2] - delta)[..., None]

    def jac(beta):
        zero = np.zeros_like(beta[..., 0])
        return np.stack([zero, beta[..., 2], beta[..., 1]], axis=-1)[..., None, :]

    return g, jac


def _nonlinear(kind, delta, name):
    delta = float(delta)
    if kind == "a":
        g, jac = _h0a(delta)
        return Restriction(name, g, 1, jac, _away_from_pole)
    g, jac = _h0b(delta)
    return Restriction(name, g, 1, jac)


def linear_restriction(R, r=None, name="linear"):
    """Linear restriction ``R beta - r``."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    r = np.zeros(R.shape[0]) if r is None else np.atleast_1d(np.asarray(r, dtype=float))
    if r.shape != (R.shape[0],):
        raise DimensionError(f"R is {R.shape} but r has shape {r.shape}")
    if R.shape[0] > R.shape[1]:
        raise DimensionError("more restrictions than parameters")
    R.setflags(write=False)
    r.setflags(write=False)

    def g(beta):
        return np.einsum("qp,...p->...q", R, beta) - r

    def jac(beta):
        return np.broadcast_to(R, np.shape(beta)[:-1] + R.shape)

    return Restriction(name, g, R.shape[0], jac)


RESTRICTIONS = {
    "h0a": lambda: _nonlinear("a", 1.0, "h0a"),
    "h0b": lambda: _nonlinear("b", 1.0, "h0b"),
    "h0a-delta": lambda delta: _nonlinear("a", delta, "h0a-delta"),
    "h0b-delta": lambda delta: _nonlinear("b", delta, "h0b-delta"),
    "linear": linear_restriction,
}


def get_restriction(name, **params):
    """Build a registered restriction.

    ``h0a`` is ``beta2 - 1/beta3``, ``h0b`` is ``beta2*beta3 - 1``; the
    ``-delta`` forms take ``delta=`` and ``linear`` takes ``R=`` and ``r=``.
    """
    try:
        factory = RESTRICTIONS[name]
    except KeyError:
        raise InputError(
            f"unknown restriction {name!r}; known: {sorted(RESTRICTIONS)}"
        ) from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise InputError(f"bad parameters for restriction {name!r}: {exc}") from None


def _check_rank(G):
    s = np.linalg.svd(G, compute_uv=False)
    if s.size == 0 or s[0] == 0 or s[-1] < RANK_RTOL * s[0]:
        raise RankDeficiencyError(
            f"restriction Jacobian is rank deficient (singular values {s})"
        )


def eval_restriction(r, beta):
    """Return ``(g(beta), G(beta))`` after domain and rank checks."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or not np.all(np.isfinite(beta)):
        raise DomainError("parameter vector must be 1-d and finite")
    if not r.in_domain(beta):
        raise DomainError(f"restriction {r.name!r} is undefined at {beta}")
    gval = np.asarray(r.g(beta), dtype=float).reshape(r.q)
    G = np.asarray(r.G(beta), dtype=float).reshape(r.q, beta.size)
    if r.q > beta.size:
        raise DimensionError("more restrictions than parameters")
    _check_rank(G)
    return gval, G


def moore_penrose(G):
    """Moore-Penrose inverse ``G' (G G')^{-1}`` of a full-row-rank matrix.

    Works on stacks of matrices (leading batch axes).  ``G G'`` is
    factorized by Cholesky; badly conditioned or failed factorizations fall
    back to an SVD, which raises :class:`RankDeficiencyError` when the rank
    is below ``q``.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim < 2 or G.shape[-2] > G.shape[-1]:
        raise DimensionError(f"expected a q x p matrix with q <= p, got {G.shape}")
    Gt = np.swapaxes(G, -1, -2)
    try:
        L = np.linalg.cholesky(G @ Gt)
        d = np.diagonal(L, axis1=-2, axis2=-1)
        # cond(G) is roughly max(d)/min(d); leave the delicate cases to the SVD
        if np.all(np.min(d, axis=-1) > 1e-6 * np.max(d, axis=-1)):
            X = np.linalg.solve(L, G)
            X = np.linalg.solve(np.swapaxes(L, -1, -2), X)
            return np.swapaxes(X, -1, -2)
    except np.linalg.LinAlgError:
        pass
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    if np.any(s[..., -1] < RANK_RTOL * s[..., 0]) or np.any(s[..., 0] == 0):
        raise RankDeficiencyError("restriction Jacobian is rank deficient")
    return np.swapaxes(Vt, -1, -2) @ (np.swapaxes(U, -1, -2) / s[..., :, None])


def projection(G):
    """Orthogonal projector ``G^+ G`` onto the row space of ``G``."""
    G = np.asarray(G, dtype=float)
    return moore_penrose(G) @ G


def moore_penrose_batch(G):
    """SVD-based Moore-Penrose inverse for a stack of matrices.

    Returns ``(G_plus, ok)`` where ``ok`` flags the members of full row rank
    (non-finite or rank-deficient members get NaN instead of raising).
    """
    G = np.asarray(G, dtype=float)
    finite = np.all(np.isfinite(G), axis=(-2, -1))
    Gs = np.where(finite[..., None, None], G, 0.0)
    U, s, Vt = np.linalg.svd(Gs, full_matrices=False)
    ok = finite & (s[..., -1] >= RANK_RTOL * s[..., 0]) & (s[..., 0] > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        Gp = np.swapaxes(Vt, -1, -2) @ (np.swapaxes(U, -1, -2) / s[..., :, None])
    Gp = np.where(ok[..., None, None], Gp, np.nan)
    return Gp, ok
