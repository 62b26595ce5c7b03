# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: pairwise kernel sums and one finite-volume step.

Every output row is reduced sequentially by a single thread, so results do
not depend on the OpenMP thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport fabs, sqrt, tanh

cnp.import_array()

cdef enum:
    LINEAR = 0
    SATURATING = 1
    TANH_RADIAL = 2


cdef inline double _radial_factor(int family, double a, double s, double r) noexcept nogil:
    # K(y) = factor(|y|) * y
    if family == LINEAR:
        return a
    if family == SATURATING:
        return a / (1.0 + r)
    if r == 0.0:
        return 0.0
    return (a / s) * tanh(s * r) / r


cdef void _sum_1d(int family, double a, double s,
                  const double[:, ::1] sources, const double[::1] weights,
                  const double[:, ::1] targets, double[:, ::1] out, int nthreads) noexcept nogil:
    # scalar specialisation: one accumulator per target, family hoisted out
    cdef Py_ssize_t n_src = sources.shape[0]
    cdef Py_ssize_t n_tgt = targets.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc, x, diff, r
    for j in prange(n_tgt, num_threads=nthreads, schedule="static"):
        x = targets[j, 0]
        acc = 0.0
        if family == LINEAR:
            for i in range(n_src):
                acc = acc + weights[i] * a * (sources[i, 0] - x)
        elif family == SATURATING:
            for i in range(n_src):
                diff = sources[i, 0] - x
                acc = acc + weights[i] * (a / (1.0 + fabs(diff))) * diff
        else:
            for i in range(n_src):
                diff = sources[i, 0] - x
                r = fabs(diff)
                if r > 0.0:
                    acc = acc + weights[i] * ((a / s) * tanh(s * r) / r) * diff
        out[j, 0] = acc


def interaction_sum(int family, double a, double s,
                    const double[:, ::1] sources,
                    const double[::1] weights,
                    const double[:, ::1] targets,
                    int nthreads=1):
    """out[j] = sum_i weights[i] * K(sources[i] - targets[j])."""
    cdef Py_ssize_t n_src = sources.shape[0]
    cdef Py_ssize_t n_tgt = targets.shape[0]
    cdef Py_ssize_t d = sources.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, f, diff
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((n_tgt, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr

    if targets.shape[1] != d:
        raise ValueError("sources and targets differ in dimension")
    if weights.shape[0] != n_src:
        raise ValueError("weights length does not match sources")

    if d == 1:
        _sum_1d(family, a, s, sources, weights, targets, out, max(nthreads, 1))
        return out_arr

    for j in prange(n_tgt, nogil=True, num_threads=max(nthreads, 1), schedule="static"):
        for i in range(n_src):
            r2 = 0.0
            for k in range(d):
                diff = sources[i, k] - targets[j, k]
                r2 = r2 + diff * diff
            f = weights[i] * _radial_factor(family, a, s, sqrt(r2))
            for k in range(d):
                out[j, k] += f * (sources[i, k] - targets[j, k])
    return out_arr


def fp_step(double[::1] rho, const double[::1] a_coef, const double[::1] b_coef,
            double dx, double dt):
    """Advance cell averages by one explicit finite-volume step in place.

    The flux through interior face ``i + 1/2`` is
    ``a_coef[i] * rho[i] - b_coef[i] * rho[i + 1]``; the two boundary faces
    carry zero flux. Returns the minimum updated value.
    """
    cdef Py_ssize_t n = rho.shape[0]
    cdef Py_ssize_t i
    cdef double lam = dt / dx
    cdef double flux_left = 0.0, flux_right, rmin = 1e300
    cdef double rho_i_old

    if a_coef.shape[0] != n - 1 or b_coef.shape[0] != n - 1:
        raise ValueError("face coefficients must have n_cells - 1 entries")

    with nogil:
        for i in range(n):
            rho_i_old = rho[i]
            if i < n - 1:
                flux_right = a_coef[i] * rho_i_old - b_coef[i] * rho[i + 1]
            else:
                flux_right = 0.0
            rho[i] = rho_i_old - lam * (flux_right - flux_left)
            flux_left = flux_right
            if rho[i] < rmin:
                rmin = rho[i]
    return rmin
