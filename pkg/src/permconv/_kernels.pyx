# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: neighbor gather/scatter, per-vertex slot mixing, ELU.

Same contracts as permconv.kernels_py. Loops are serial so results are
bit-reproducible run to run.
"""
import numpy as np

cimport cython
from libc.math cimport expm1

ctypedef fused real:
    float
    double

IMPL = "compiled"


def gather_fw(real[:, :, ::1] x, int[:, ::1] idx):
    cdef Py_ssize_t b = x.shape[0], n = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t k = idx.shape[1]
    cdef Py_ssize_t ib, i, j, c, src
    out_np = np.zeros((b, n, d, k), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] out = out_np
    for ib in range(b):
        for i in range(n):
            for j in range(k):
                src = idx[i, j]
                if src >= 0:
                    for c in range(d):
                        out[ib, i, c, j] = x[ib, src, c]
    return out_np


def gather_bw(real[:, :, :, ::1] g, int[:, ::1] idx, Py_ssize_t n_vertices):
    cdef Py_ssize_t b = g.shape[0], n = g.shape[1], d = g.shape[2], k = g.shape[3]
    cdef Py_ssize_t ib, i, j, c, src
    dx_np = np.zeros((b, n_vertices, d), dtype=np.asarray(g).dtype)
    cdef real[:, :, ::1] dx = dx_np
    for ib in range(b):
        for i in range(n):
            for j in range(k):
                src = idx[i, j]
                if src >= 0:
                    for c in range(d):
                        dx[ib, src, c] += g[ib, i, c, j]
    return dx_np


def permute_fw(real[:, :, :, ::1] x, real[:, :, ::1] perm):
    cdef Py_ssize_t b = x.shape[0], n = x.shape[1], d = x.shape[2], k = x.shape[3]
    cdef Py_ssize_t ib, i, c, j, l
    cdef real acc
    out_np = np.empty((b, n, d, k), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] out = out_np
    for ib in range(b):
        for i in range(n):
            for c in range(d):
                for l in range(k):
                    acc = 0
                    for j in range(k):
                        acc += x[ib, i, c, j] * perm[i, j, l]
                    out[ib, i, c, l] = acc
    return out_np


def permute_bw_x(real[:, :, :, ::1] g, real[:, :, ::1] perm):
    cdef Py_ssize_t b = g.shape[0], n = g.shape[1], d = g.shape[2], k = g.shape[3]
    cdef Py_ssize_t ib, i, c, j, l
    cdef real acc
    dx_np = np.empty((b, n, d, k), dtype=np.asarray(g).dtype)
    cdef real[:, :, :, ::1] dx = dx_np
    for ib in range(b):
        for i in range(n):
            for c in range(d):
                for j in range(k):
                    acc = 0
                    for l in range(k):
                        acc += g[ib, i, c, l] * perm[i, j, l]
                    dx[ib, i, c, j] = acc
    return dx_np


def permute_bw_p(real[:, :, :, ::1] x, real[:, :, :, ::1] g):
    cdef Py_ssize_t b = x.shape[0], n = x.shape[1], d = x.shape[2], k = x.shape[3]
    cdef Py_ssize_t ib, i, c, j, l
    dp_np = np.zeros((n, k, k), dtype=np.asarray(x).dtype)
    cdef real[:, :, ::1] dp = dp_np
    for ib in range(b):
        for i in range(n):
            for c in range(d):
                for j in range(k):
                    for l in range(k):
                        dp[i, j, l] += x[ib, i, c, j] * g[ib, i, c, l]
    return dp_np


def elu_fw(real[::1] x, double alpha=1.0):
    cdef Py_ssize_t m = x.shape[0], i
    out_np = np.empty(m, dtype=np.asarray(x).dtype)
    cdef real[::1] out = out_np
    for i in range(m):
        if x[i] > 0:
            out[i] = x[i]
        else:
            out[i] = <real> (alpha * expm1(x[i]))
    return out_np


def elu_bw(real[::1] y, real[::1] g, double alpha=1.0):
    cdef Py_ssize_t m = y.shape[0], i
    out_np = np.empty(m, dtype=np.asarray(y).dtype)
    cdef real[::1] out = out_np
    for i in range(m):
        if y[i] > 0:
            out[i] = g[i]
        else:
            out[i] = <real> (g[i] * (y[i] + alpha))
    return out_np
