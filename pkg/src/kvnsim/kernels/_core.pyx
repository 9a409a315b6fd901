# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; see ``_fallback`` for semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sin, cos, log

cnp.import_array()


def periodic_interp(values, x_min, dx, points):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=2] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] lo = np.ascontiguousarray(x_min, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] h = np.ascontiguousarray(dx, dtype=np.float64)
    cdef int d = pts.shape[0]
    cdef Py_ssize_t M = pts.shape[1]
    cdef cnp.ndarray[long, ndim=1] shape = np.asarray(np.shape(values), dtype=np.int64)
    cdef cnp.ndarray[long, ndim=1] strides = np.ones(d, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(M)
    cdef long base[16]
    cdef double frac[16]
    cdef Py_ssize_t i, flat_idx
    cdef int j, corner, ncorner = 1 << d, bit
    cdef long k
    cdef double s, w, acc

    if d > 16:
        raise ValueError("at most 16 dimensions supported")
    for j in range(d - 2, -1, -1):
        strides[j] = strides[j + 1] * shape[j + 1]

    for i in range(M):
        for j in range(d):
            s = (pts[j, i] - lo[j]) / h[j]
            k = <long>floor(s)
            frac[j] = s - k
            base[j] = k
        acc = 0.0
        for corner in range(ncorner):
            w = 1.0
            flat_idx = 0
            for j in range(d):
                bit = (corner >> (d - 1 - j)) & 1
                if bit:
                    w *= frac[j]
                else:
                    w *= 1.0 - frac[j]
                k = (base[j] + bit) % shape[j]
                if k < 0:
                    k += shape[j]
                flat_idx += k * strides[j]
            acc += w * flat[flat_idx]
        out[i] = acc
    return out


def ae_loglik(theta, m, hits, shots):
    cdef cnp.ndarray[double, ndim=1] th = np.ascontiguousarray(theta, dtype=np.float64).ravel()
    cdef cnp.ndarray[long, ndim=1] mm = np.ascontiguousarray(m, dtype=np.int64)
    cdef cnp.ndarray[long, ndim=1] hh = np.ascontiguousarray(hits, dtype=np.int64)
    cdef cnp.ndarray[long, ndim=1] nn = np.ascontiguousarray(shots, dtype=np.int64)
    cdef Py_ssize_t G = th.shape[0], K = mm.shape[0], g, k
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(G)
    cdef double ang, ps, pc, acc, tiny = 1e-300
    for g in range(G):
        acc = 0.0
        for k in range(K):
            ang = (2 * mm[k] + 1) * th[g]
            ps = sin(ang)
            ps = ps * ps
            pc = cos(ang)
            pc = pc * pc
            if hh[k] > 0:
                acc += hh[k] * log(ps if ps > tiny else tiny)
            if nn[k] - hh[k] > 0:
                acc += (nn[k] - hh[k]) * log(pc if pc > tiny else tiny)
        out[g] = acc
    return out.reshape(np.shape(theta))
