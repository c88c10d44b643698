# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the posterior-variance and rank-one downdate hot loop.

The dense quadratic form reads only the upper triangle of the symmetric
matrix (half the memory traffic of a matvec), the sparse variants skip the
zero blocks of embedded-context gradients, and the downdates run in place
without temporaries beyond one work vector.
"""

import numpy as np

cimport numpy as cnp

from ..errors import NumericalError

DENOM_FLOOR = 1e-12


def quad_form(double[:, ::1] u, double[::1] g):
    """g' U g for symmetric U (upper triangle traversal)."""
    cdef Py_ssize_t p = g.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc = 0.0
    cdef double off, gi
    for i in range(p):
        gi = g[i]
        acc += gi * gi * u[i, i]
        off = 0.0
        for j in range(i + 1, p):
            off += u[i, j] * g[j]
        acc += 2.0 * gi * off
    return acc


def quad_forms(double[:, ::1] u, double[:, ::1] gs):
    """Row-wise quadratic forms for a (K, p) stack of vectors."""
    cdef Py_ssize_t n = gs.shape[0]
    cdef Py_ssize_t k
    out = np.empty(n)
    cdef double[::1] out_view = out
    for k in range(n):
        out_view[k] = quad_form(u, gs[k])
    return out


def quad_form_idx(double[:, ::1] u, cnp.intp_t[::1] idx, double[::1] vals):
    """Quadratic form for a sparse vector given as (indices, values)."""
    cdef Py_ssize_t nnz = idx.shape[0]
    cdef Py_ssize_t a, b
    cdef double acc = 0.0
    cdef double row
    cdef Py_ssize_t ia
    for a in range(nnz):
        ia = idx[a]
        row = 0.0
        for b in range(nnz):
            row += u[ia, idx[b]] * vals[b]
        acc += vals[a] * row
    return acc


cdef double _downdate(double[:, ::1] u, double[::1] v, double q, double m) except? -1.0:
    cdef Py_ssize_t p = v.shape[0]
    cdef Py_ssize_t i, j
    cdef double denom = m + q
    cdef double inv, vi
    if denom != denom or denom <= DENOM_FLOOR:
        raise NumericalError(f"rank-one update denominator {denom!r} is not usable")
    inv = 1.0 / denom
    for i in range(p):
        vi = v[i] * inv
        for j in range(p):
            u[i, j] -= vi * v[j]
    return denom


def sm_update(double[:, ::1] u, double[::1] g, double m):
    """In-place Sherman-Morrison downdate of U^-1 for U += g g'/m."""
    cdef Py_ssize_t p = g.shape[0]
    cdef Py_ssize_t i, j
    cdef double q = 0.0
    cdef double acc
    work = np.empty(p)
    cdef double[::1] v = work
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += u[i, j] * g[j]
        v[i] = acc
        q += g[i] * acc
    return _downdate(u, v, q, m)


def sm_update_idx(double[:, ::1] u, cnp.intp_t[::1] idx, double[::1] vals, double m):
    """Sherman-Morrison downdate for a sparse update vector."""
    cdef Py_ssize_t p = u.shape[0]
    cdef Py_ssize_t nnz = idx.shape[0]
    cdef Py_ssize_t i, a
    cdef double q = 0.0
    cdef double acc
    work = np.empty(p)
    cdef double[::1] v = work
    for i in range(p):
        acc = 0.0
        for a in range(nnz):
            acc += u[i, idx[a]] * vals[a]
        v[i] = acc
    for a in range(nnz):
        q += vals[a] * v[idx[a]]
    return _downdate(u, v, q, m)
