# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for CountSketch application and bucket assignment.

Every routine here has a numpy twin in ``_fallback`` with identical
semantics; both accumulate in the same order so results agree bitwise.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def cs_apply_rows(const cnp.int64_t[::1] p, const double[::1] v,
                  const double[:, ::1] A, Py_ssize_t m):
    """Return ``S @ A`` for ``S = CS(p, v)`` with ``m`` rows."""
    cdef Py_ssize_t n = A.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, b
    cdef double w
    out = np.zeros((m, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        w = v[i]
        if w == 0.0:
            continue
        b = p[i]
        for j in range(d):
            o[b, j] += w * A[i, j]
    return out


def cs_apply_cols(const cnp.int64_t[::1] p, const double[::1] v,
                  const double[:, ::1] A, Py_ssize_t m):
    """Return ``A @ S.T`` for ``S = CS(p, v)`` acting on the columns of A."""
    cdef Py_ssize_t n = A.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j
    cdef double w
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(d):
            w = v[j]
            if w != 0.0:
                o[i, p[j]] += w * A[i, j]
    return out


def argmax_abs_inner(const double[:, ::1] centers, const double[:, ::1] rows):
    """For each row, the center with largest |<center, row>| and its sign.

    Ties go to the lowest center index; a zero inner product gets sign +1.
    Inner products come from one BLAS product, shared with the fallback.
    """
    cdef Py_ssize_t n = rows.shape[0], m = centers.shape[0]
    cdef Py_ssize_t i, c, best
    cdef double dot, a, best_abs, best_dot
    dots_arr = np.ascontiguousarray(np.asarray(rows) @ np.asarray(centers).T)
    cdef const double[:, ::1] dots = dots_arr
    bucket = np.zeros(n, dtype=np.int64)
    sign = np.ones(n, dtype=np.float64)
    cdef cnp.int64_t[::1] bk = bucket
    cdef double[::1] sg = sign
    for i in range(n):
        best = 0
        best_abs = -1.0
        best_dot = 0.0
        for c in range(m):
            dot = dots[i, c]
            a = dot if dot >= 0 else -dot
            if a > best_abs:
                best_abs = a
                best_dot = dot
                best = c
        bk[i] = best
        sg[i] = -1.0 if best_dot < 0 else 1.0
    return bucket, sign
