"""Pure numpy relaxation and energy kernels (reference implementation).

The compiled extension in _sweep.pyx implements the same scalar sweep;
equality of the two paths is asserted in the test suite. All reductions
use fixed-order np.add.reduceat so results are deterministic.
"""
from __future__ import annotations

import numpy as np


def sweep_scalar(vals, sigma, omega, plan):
    """One colored SOR sweep on real-valued columns.

    vals: (N, k) float64, updated in place on plan's free nodes.
    sigma: (E, k) float64 per-edge shifts.
    Returns the max |target - old| over updated nodes (pre-relaxation
    Gauss-Seidel residual in the sup norm).
    """
    resid = 0.0
    for c in range(plan.n_colors):
        a, b = plan.color_ptr[c], plan.color_ptr[c + 1]
        nodes = plan.nodes[a:b]
        lo, hi = plan.ptr[a], plan.ptr[b]
        nbr = plan.he_nbr[lo:hi]
        w = plan.he_w[lo:hi, None]
        contrib = w * (vals[nbr] + plan.he_sign[lo:hi, None]
                       * sigma[plan.he_edge[lo:hi]])
        sums = np.add.reduceat(contrib, plan.ptr[a:b] - lo, axis=0)
        target = sums / plan.wsum[a:b, None]
        delta = target - vals[nodes]
        resid = max(resid, float(np.max(np.abs(delta), initial=0.0)))
        vals[nodes] += omega * delta
    return resid


def sweep_matrix(vals, sigma, omega, plan):
    """One colored SOR sweep on Hermitian-matrix-valued log fields.

    vals: (N, n, n) complex128 in place; sigma: (E, n, n) complex128.
    The edge energy is entrywise quadratic in the log values, so the
    update is the same weighted average as the scalar path.
    """
    resid = 0.0
    for c in range(plan.n_colors):
        a, b = plan.color_ptr[c], plan.color_ptr[c + 1]
        nodes = plan.nodes[a:b]
        lo, hi = plan.ptr[a], plan.ptr[b]
        nbr = plan.he_nbr[lo:hi]
        w = plan.he_w[lo:hi, None, None]
        contrib = w * (vals[nbr] + plan.he_sign[lo:hi, None, None]
                       * sigma[plan.he_edge[lo:hi]])
        sums = np.add.reduceat(contrib, plan.ptr[a:b] - lo, axis=0)
        target = sums / plan.wsum[a:b, None, None]
        delta = target - vals[nodes]
        resid = max(resid, float(np.max(np.abs(delta), initial=0.0)))
        vals[nodes] += omega * delta
    return resid


def gs_residual(vals, sigma, plan):
    """Sup-norm distance of free nodes from their Gauss-Seidel targets."""
    if vals.ndim == 2:
        return sweep_scalar(vals.copy(), sigma, 0.0, plan)
    return sweep_matrix(vals.copy(), sigma, 0.0, plan)


def edge_energy(vals, sigma, src, dst, w):
    """(1/8) sum_e w_e |vals_src - vals_dst - sigma_e|^2 (Frobenius)."""
    d = vals[src] - vals[dst] - sigma
    mag2 = np.abs(d) ** 2
    while mag2.ndim > 1:
        mag2 = mag2.sum(axis=-1)
    return 0.125 * float(np.dot(w, mag2))
