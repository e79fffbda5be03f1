# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``.

Same signatures and semantics; loops are fused so no batch-sized
temporaries are allocated beyond the outputs.
"""

import numpy as np


def conjugate_diag(const double complex[:, :, ::1] U, const double[::1] s):
    cdef Py_ssize_t n = U.shape[0], d = U.shape[1]
    cdef Py_ssize_t k, a, b, c
    cdef double re, im, ur, ui, vr, vi, acc
    out = np.empty((n, d, d), dtype=np.complex128)
    cdef double complex[:, :, ::1] o = out
    for k in range(n):
        for a in range(d):
            acc = 0.0
            for c in range(d):
                ur = U[k, a, c].real
                ui = U[k, a, c].imag
                acc = acc + s[c] * (ur * ur + ui * ui)
            o[k, a, a] = acc
            for b in range(a + 1, d):
                re = 0.0
                im = 0.0
                for c in range(d):
                    ur = U[k, a, c].real
                    ui = U[k, a, c].imag
                    vr = U[k, b, c].real
                    vi = U[k, b, c].imag
                    # U[a,c] * s[c] * conj(U[b,c])
                    re = re + s[c] * (ur * vr + ui * vi)
                    im = im + s[c] * (ui * vr - ur * vi)
                o[k, a, b] = re + 1j * im
                o[k, b, a] = re - 1j * im
    return out


def pair_kernel(const double complex[:, :, ::1] A, const double complex[:, :, ::1] B,
                const double[::1] w):
    cdef Py_ssize_t n = A.shape[0], d = A.shape[1]
    cdef Py_ssize_t k, a, b
    cdef double complex acc, row
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] o = out
    for k in range(n):
        acc = 0.0
        for a in range(d):
            row = 0.0
            for b in range(d):
                row = row + A[k, a, b] * B[k, b, a]
            acc = acc + w[a] * row
        o[k] = acc
    return out


def haar_quadratic(const double complex[:, :, ::1] U, const double[::1] s):
    cdef Py_ssize_t n = U.shape[0], d = U.shape[1]
    cdef Py_ssize_t k, a, b
    cdef double acc, row, ur, ui
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for k in range(n):
        acc = 0.0
        for a in range(d):
            row = 0.0
            for b in range(d):
                ur = U[k, a, b].real
                ui = U[k, a, b].imag
                row = row + (ur * ur + ui * ui) * s[b]
            acc = acc + s[a] * row
        o[k] = acc
    return out


def prefix_cutoff(const double[::1] values, double budget):
    cdef Py_ssize_t k, n = values.shape[0]
    cdef double total = 0.0
    for k in range(n):
        total = total + values[k]
        if total > budget:
            return k
    return n
