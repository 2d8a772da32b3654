# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython twins of the numpy kernels in ``reference.py``.

Fused single-pass loops over the mesh dimension; semantics must match the
reference module exactly (see tests/test_kernels.py).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log2, pow

cnp.import_array()

LN2 = 0.6931471805599453
cdef double C_LN2 = 0.6931471805599453

BACKEND = "compiled"


def capacity_terms(cnp.ndarray[cnp.float64_t, ndim=2] p,
                   cnp.ndarray[cnp.float64_t, ndim=2] chi,
                   cnp.ndarray[cnp.float64_t, ndim=2] r,
                   cnp.ndarray[cnp.float64_t, ndim=1] coefs,
                   double alpha, double bandwidth, bint need_jac=True):
    cdef Py_ssize_t n = p.shape[0], m = p.shape[1], i, k
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gap = np.empty(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dp
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dchi
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cpw = np.empty((n, m))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] term = np.empty((n, m))
    cdef double snr, rsum, common
    if need_jac:
        dp = np.empty((n, m))
        dchi = np.empty((n, m))
    else:
        dp = np.empty((0, 0))
        dchi = np.empty((0, 0))
    for k in range(m):
        snr = 0.0
        rsum = 0.0
        for i in range(n):
            cpw[i, k] = pow(chi[i, k], -alpha)
            term[i, k] = coefs[i] * p[i, k] * cpw[i, k]
            snr += term[i, k]
            rsum += r[i, k]
        gap[k] = rsum - bandwidth * log2(1.0 + snr)
        if need_jac:
            common = (bandwidth / C_LN2) / (1.0 + snr)
            for i in range(n):
                dp[i, k] = -common * coefs[i] * cpw[i, k]
                dchi[i, k] = common * alpha * term[i, k] / chi[i, k]
    if need_jac:
        return gap, dp, dchi
    return gap, None, None


def drag_terms(cnp.ndarray[cnp.float64_t, ndim=1] v,
               double cd1, double cd2, bint need_jac=True):
    cdef Py_ssize_t n = v.shape[0], k
    cdef cnp.ndarray[cnp.float64_t, ndim=1] drag = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ddrag
    cdef double v2
    if need_jac:
        ddrag = np.empty(n)
    else:
        ddrag = np.empty(0)
    for k in range(n):
        v2 = v[k] * v[k]
        drag[k] = cd1 * v2 + cd2 / v2
        if need_jac:
            ddrag[k] = 2.0 * cd1 * v[k] - 2.0 * cd2 / (v2 * v[k])
    if need_jac:
        return drag, ddrag
    return drag, None


def speed_power_terms(cnp.ndarray[cnp.float64_t, ndim=1] v,
                      double cd1, double cd2, bint need_jac=True):
    cdef Py_ssize_t n = v.shape[0], k
    cdef cnp.ndarray[cnp.float64_t, ndim=1] power = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dpower
    cdef double v2
    if need_jac:
        dpower = np.empty(n)
    else:
        dpower = np.empty(0)
    for k in range(n):
        v2 = v[k] * v[k]
        power[k] = cd1 * v2 * v[k] + cd2 / v[k]
        if need_jac:
            dpower[k] = 3.0 * cd1 * v2 - cd2 / v2
    if need_jac:
        return power, dpower
    return power, None


def al_weights(cnp.ndarray[cnp.float64_t, ndim=1] c,
               cnp.ndarray[cnp.float64_t, ndim=1] lam,
               double mu,
               cnp.ndarray[cnp.uint8_t, ndim=1, cast=True] eq_mask):
    cdef Py_ssize_t n = c.shape[0], k
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.empty(n)
    cdef double penalty = 0.0, s
    for k in range(n):
        s = lam[k] + mu * c[k]
        if eq_mask[k] or s > 0.0:
            w[k] = s
            penalty += (s * s - lam[k] * lam[k]) / (2.0 * mu)
        else:
            w[k] = 0.0
            penalty += -lam[k] * lam[k] / (2.0 * mu)
    return penalty, w
