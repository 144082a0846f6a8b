# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()


def pdirichlet(R_in, double h, double p, double eps):
    cdef cnp.ndarray[cnp.float64_t, ndim=5, mode="c"] R = np.ascontiguousarray(R_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=5, mode="c"] grad = np.zeros_like(R)
    cdef double[:, :, :, :, ::1] Rv = R
    cdef double[:, :, :, :, ::1] gv = grad
    cdef Py_ssize_t n1 = R.shape[0], n2 = R.shape[1], n3 = R.shape[2]
    cdef Py_ssize_t i, j, k, s1, s2, s3, a, b, c
    cdef Py_ssize_t m0, m1, m2, lo0, lo1, lo2, hi0, hi1, hi2
    cdef double w = h * h * h / 8.0
    cdef double e0 = pow(eps, p) if eps > 0 else 0.0
    cdef double eps2 = eps * eps
    cdef double half_p = 0.5 * p
    cdef double G[3][3][3]
    cdef double q, coef, g, energy = 0.0, cell_e
    cdef double inv_h = 1.0 / h

    for i in range(n1 - 1):
        for j in range(n2 - 1):
            for k in range(n3 - 1):
                cell_e = 0.0
                for s1 in range(2):
                    for s2 in range(2):
                        for s3 in range(2):
                            m0 = i + s1
                            m1 = j + s2
                            m2 = k + s3
                            q = eps2
                            for a in range(3):
                                # edge along axis a inside this cell touching corner m
                                lo0 = m0; lo1 = m1; lo2 = m2
                                hi0 = m0; hi1 = m1; hi2 = m2
                                if a == 0:
                                    lo0 = i; hi0 = i + 1
                                elif a == 1:
                                    lo1 = j; hi1 = j + 1
                                else:
                                    lo2 = k; hi2 = k + 1
                                for b in range(3):
                                    for c in range(3):
                                        g = (Rv[hi0, hi1, hi2, b, c] - Rv[lo0, lo1, lo2, b, c]) * inv_h
                                        G[b][c][a] = g
                                        q += g * g
                            cell_e += pow(q, half_p) - e0
                            coef = w * p * pow(q, half_p - 1.0) * inv_h
                            for a in range(3):
                                lo0 = m0; lo1 = m1; lo2 = m2
                                hi0 = m0; hi1 = m1; hi2 = m2
                                if a == 0:
                                    lo0 = i; hi0 = i + 1
                                elif a == 1:
                                    lo1 = j; hi1 = j + 1
                                else:
                                    lo2 = k; hi2 = k + 1
                                for b in range(3):
                                    for c in range(3):
                                        g = coef * G[b][c][a]
                                        gv[hi0, hi1, hi2, b, c] += g
                                        gv[lo0, lo1, lo2, b, c] -= g
                energy += w * cell_e
    return energy, grad


def laplace7(u_in, double h):
    u_arr = np.ascontiguousarray(u_in, dtype=np.float64)
    shape = u_arr.shape
    cdef cnp.ndarray[cnp.float64_t, ndim=4, mode="c"] u = u_arr.reshape(shape[:3] + (-1,))
    cdef cnp.ndarray[cnp.float64_t, ndim=4, mode="c"] out = np.zeros_like(u)
    cdef double[:, :, :, ::1] uv = u
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t n1 = u.shape[0], n2 = u.shape[1], n3 = u.shape[2], m = u.shape[3]
    cdef Py_ssize_t i, j, k, c
    cdef double inv_h2 = 1.0 / (h * h)
    for i in range(1, n1 - 1):
        for j in range(1, n2 - 1):
            for k in range(1, n3 - 1):
                for c in range(m):
                    ov[i, j, k, c] = (
                        uv[i + 1, j, k, c] + uv[i - 1, j, k, c]
                        + uv[i, j + 1, k, c] + uv[i, j - 1, k, c]
                        + uv[i, j, k + 1, c] + uv[i, j, k - 1, c]
                        - 6.0 * uv[i, j, k, c]
                    ) * inv_h2
    return out.reshape(shape)
