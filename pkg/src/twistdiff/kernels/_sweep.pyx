# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled colored SOR sweep for real-valued log-metric columns.

Mirrors kernels.pure.sweep_scalar; the pure path is the reference and
the two are compared in the tests.
"""
import numpy as np

cimport numpy as cnp


def sweep_scalar(double[:, ::1] vals, double[:, ::1] sigma, double omega,
                 int[::1] nodes, int[::1] color_ptr, int[::1] ptr,
                 int[::1] he_nbr, double[::1] he_w, int[::1] he_edge,
                 double[::1] he_sign, double[::1] wsum):
    cdef Py_ssize_t k = vals.shape[1]
    cdef Py_ssize_t nc = color_ptr.shape[0] - 1
    cdef Py_ssize_t c, r, e, col, node
    cdef double acc, target, delta, resid = 0.0, s, w
    cdef int nbr, eid
    for c in range(nc):
        for r in range(color_ptr[c], color_ptr[c + 1]):
            node = nodes[r]
            for col in range(k):
                acc = 0.0
                for e in range(ptr[r], ptr[r + 1]):
                    nbr = he_nbr[e]
                    eid = he_edge[e]
                    w = he_w[e]
                    s = he_sign[e]
                    acc += w * (vals[nbr, col] + s * sigma[eid, col])
                target = acc / wsum[r]
                delta = target - vals[node, col]
                if delta < 0:
                    if -delta > resid:
                        resid = -delta
                elif delta > resid:
                    resid = delta
                vals[node, col] += omega * delta
    return resid
