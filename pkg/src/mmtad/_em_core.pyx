# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused EM kernels for 2-D Gaussian mixtures.

Same contracts as :mod:`mmtad._em_py`; loops are fused so no ``(N, M)``
temporaries beyond the responsibility matrix are allocated.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, M_PI

cnp.import_array()


def estep(const double[:, ::1] points, const double[:, ::1] means, const double[:, :, ::1] covs,
          const double[::1] weights):
    cdef Py_ssize_t N = points.shape[0]
    cdef Py_ssize_t M = means.shape[0]
    cdef Py_ssize_t n, m
    cdef double du, dv, top, acc, lse, total = 0.0
    cdef double[::1] ia = np.empty(M)
    cdef double[::1] ib = np.empty(M)
    cdef double[::1] id_ = np.empty(M)
    cdef double[::1] lnorm = np.empty(M)
    cdef double det
    resp_arr = np.empty((N, M))
    cdef double[:, ::1] resp = resp_arr

    for m in range(M):
        det = covs[m, 0, 0] * covs[m, 1, 1] - covs[m, 0, 1] * covs[m, 0, 1]
        ia[m] = covs[m, 1, 1] / det
        ib[m] = -covs[m, 0, 1] / det
        id_[m] = covs[m, 0, 0] / det
        lnorm[m] = log(weights[m]) - log(2.0 * M_PI) - 0.5 * log(det)

    for n in range(N):
        top = -1e300
        for m in range(M):
            du = points[n, 0] - means[m, 0]
            dv = points[n, 1] - means[m, 1]
            resp[n, m] = lnorm[m] - 0.5 * (ia[m] * du * du + 2.0 * ib[m] * du * dv
                                           + id_[m] * dv * dv)
            if resp[n, m] > top:
                top = resp[n, m]
        acc = 0.0
        for m in range(M):
            acc += exp(resp[n, m] - top)
        lse = top + log(acc)
        total += lse
        for m in range(M):
            resp[n, m] = exp(resp[n, m] - lse)
    return resp_arr, total


def mstep(const double[:, ::1] points, const double[:, ::1] resp):
    cdef Py_ssize_t N = points.shape[0]
    cdef Py_ssize_t M = resp.shape[1]
    cdef Py_ssize_t n, m
    cdef double r, du, dv, s
    lam_arr = np.zeros(M)
    means_arr = np.zeros((M, 2))
    covs_arr = np.zeros((M, 2, 2))
    cdef double[::1] lam = lam_arr
    cdef double[:, ::1] mu = means_arr
    cdef double[:, :, ::1] cov = covs_arr

    for n in range(N):
        for m in range(M):
            r = resp[n, m]
            lam[m] += r
            mu[m, 0] += r * points[n, 0]
            mu[m, 1] += r * points[n, 1]
    for m in range(M):
        s = lam[m] if lam[m] > 0 else 1.0
        mu[m, 0] /= s
        mu[m, 1] /= s
    for n in range(N):
        for m in range(M):
            r = resp[n, m]
            du = points[n, 0] - mu[m, 0]
            dv = points[n, 1] - mu[m, 1]
            cov[m, 0, 0] += r * du * du
            cov[m, 0, 1] += r * du * dv
            cov[m, 1, 1] += r * dv * dv
    for m in range(M):
        s = lam[m] if lam[m] > 0 else 1.0
        cov[m, 0, 0] /= s
        cov[m, 0, 1] /= s
        cov[m, 1, 1] /= s
        cov[m, 1, 0] = cov[m, 0, 1]
    return lam_arr, means_arr, covs_arr
