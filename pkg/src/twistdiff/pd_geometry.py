"""Geometry of the space P_n of positive-definite Hermitian matrices.

P_n = GL(n,C)/U(n) carries the invariant metric <A,B>_H = tr(A H^-1 B H^-1).
All functions accept stacked inputs with shape (..., n, n) and are pure.
The normalization is fixed so that the inner product at the identity is
the plain trace form.
"""
from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefiniteError, SingularMatrixError

# A matrix passes the PD check when min eigenvalue > PD_RTOL * max eigenvalue.
PD_RTOL = 1e-13
COND_BOUND = 1e12


def hermitize(A):
    """Project onto the Hermitian part (A + A^H)/2."""
    A = np.asarray(A)
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def is_hermitian(A, tol=1e-12):
    A = np.asarray(A)
    scale = max(np.max(np.abs(A)), 1.0)
    return np.max(np.abs(A - np.conj(np.swapaxes(A, -1, -2)))) <= tol * scale


def check_pd(H):
    """Validate positive definiteness; raises NotPositiveDefiniteError."""
    H = np.asarray(H)
    if not is_hermitian(H):
        raise NotPositiveDefiniteError("matrix is not Hermitian")
    w = np.linalg.eigvalsh(H)
    wmin = np.min(w, axis=-1)
    wmax = np.max(w, axis=-1)
    if np.any(wmin <= PD_RTOL * wmax) or np.any(wmax <= 0.0):
        raise NotPositiveDefiniteError(
            f"matrix not positive definite (min eig {np.min(wmin):.3e})"
        )
    return H


def is_pd(H):
    H = np.asarray(H)
    if not is_hermitian(H):
        return False
    w = np.linalg.eigvalsh(H)
    return bool(np.all(np.min(w, axis=-1) > PD_RTOL * np.max(w, axis=-1)))


def _eig_apply(H, fn):
    """Apply a scalar function to a Hermitian matrix via eigh (batched)."""
    w, u = np.linalg.eigh(H)
    fw = fn(w)
    return (u * fw[..., None, :]) @ np.conj(np.swapaxes(u, -1, -2))


def pd_exp(h):
    """Matrix exponential of a Hermitian matrix; lands in P_n."""
    return _eig_apply(hermitize(np.asarray(h, dtype=complex)), np.exp)


def pd_log(H):
    """Matrix logarithm of a PD matrix; inverse of pd_exp."""
    return _eig_apply(np.asarray(H, dtype=complex), np.log)


def pd_sqrt(H):
    return _eig_apply(np.asarray(H, dtype=complex), np.sqrt)


def pd_invsqrt(H):
    return _eig_apply(np.asarray(H, dtype=complex), lambda w: 1.0 / np.sqrt(w))


def congruence_act(g, A):
    """Group action g o A = g A g^H of GL(n,C) on P_n."""
    g = np.asarray(g, dtype=complex)
    if np.linalg.cond(g) > COND_BOUND:
        raise SingularMatrixError("acting matrix is numerically singular")
    A = np.asarray(A, dtype=complex)
    return g @ A @ np.conj(np.swapaxes(g, -1, -2))


def inner_product(H, A, B):
    """Invariant Riemannian inner product tr(A H^-1 B H^-1) at H.

    Real for Hermitian A, B; reduces to tr(AB) at H = I.
    """
    Hinv = np.linalg.inv(H)
    return float(np.real(np.trace(A @ Hinv @ B @ Hinv)))


def geodesic(H0, H1, t):
    """Point at parameter t on the invariant-metric geodesic from H0 to H1."""
    R = pd_sqrt(H0)
    Rinv = pd_invsqrt(H0)
    M = _eig_apply(Rinv @ H1 @ Rinv, lambda w: w**t)
    return R @ M @ R


def distance(H0, H1):
    """Geodesic distance: sqrt(sum of squared log eigenvalues of H0^-1 H1).

    Batched over leading axes.
    """
    Rinv = pd_invsqrt(H0)
    w = np.linalg.eigvalsh(Rinv @ np.asarray(H1, dtype=complex) @ Rinv)
    return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))


def log_map(P, Q):
    """Tangent vector at P pointing to Q: P^1/2 log(P^-1/2 Q P^-1/2) P^1/2."""
    R = pd_sqrt(P)
    Rinv = pd_invsqrt(P)
    return R @ pd_log(Rinv @ np.asarray(Q, dtype=complex) @ Rinv) @ R


def exp_map(P, V):
    """Inverse of log_map: geodesic starting at P with initial velocity V."""
    R = pd_sqrt(P)
    Rinv = pd_invsqrt(P)
    return R @ pd_exp(Rinv @ np.asarray(V, dtype=complex) @ Rinv) @ R


def dlog_along(H, V):
    """Directional derivative of pd_log at H in the direction V.

    Daleckii-Krein formula in the eigenbasis of H: entry (i,j) of the
    derivative is V_ij * (log l_i - log l_j)/(l_i - l_j), with 1/l_i on
    the diagonal. Batched over leading axes.
    """
    H = np.asarray(H, dtype=complex)
    V = np.asarray(V, dtype=complex)
    w, u = np.linalg.eigh(H)
    uh = np.conj(np.swapaxes(u, -1, -2))
    M = uh @ V @ u
    li = w[..., :, None]
    lj = w[..., None, :]
    num = np.log(li) - np.log(lj)
    den = li - lj
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(np.abs(den) > 1e-14 * np.maximum(li, lj), num / den, 1.0 / li)
    return u @ (M * phi) @ uh
