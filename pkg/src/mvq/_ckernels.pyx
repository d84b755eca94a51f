# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics mirror mvq._kernels_py exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def patch_matrix(data, Py_ssize_t k):
    cdef cnp.float64_t[:, :, ::1] d = np.ascontiguousarray(data, dtype=np.float64)
    cdef Py_ssize_t m = d.shape[0], H = d.shape[1], W = d.shape[2]
    cdef Py_ssize_t kk = k * k, width = m * kk
    out_arr = np.zeros((H * W, width), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, j, a, b, rr, cc, row, col
    for r in range(H):
        for c in range(W):
            row = r * W + c
            for j in range(m):
                for a in range(k):
                    rr = r - a
                    if rr < 0:
                        break
                    for b in range(k):
                        cc = c - b
                        if cc < 0:
                            break
                        col = j * kk + a * k + b
                        out[row, col] = d[j, rr, cc]
    return out_arr


cdef inline Py_ssize_t _clip(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


cdef void _neighbour_mean(cnp.float64_t[:, ::1] u, cnp.float64_t[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t H = u.shape[0], W = u.shape[1]
    cdef Py_ssize_t r, c, rm, rp, cm, cp
    cdef double edge, diag
    for r in range(H):
        rm = _clip(r - 1, H)
        rp = _clip(r + 1, H)
        for c in range(W):
            cm = _clip(c - 1, W)
            cp = _clip(c + 1, W)
            edge = u[rm, c] + u[rp, c] + u[r, cm] + u[r, cp]
            diag = u[rm, cm] + u[rm, cp] + u[rp, cm] + u[rp, cp]
            out[r, c] = edge / 6.0 + diag / 12.0


def hs_iterate(Ix, Iy, It, double alpha2, Py_ssize_t iterations):
    cdef cnp.float64_t[:, ::1] ix = np.ascontiguousarray(Ix, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] iy = np.ascontiguousarray(Iy, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] it = np.ascontiguousarray(It, dtype=np.float64)
    cdef Py_ssize_t H = ix.shape[0], W = ix.shape[1]
    u_arr = np.zeros((H, W))
    v_arr = np.zeros((H, W))
    ub_arr = np.empty((H, W))
    vb_arr = np.empty((H, W))
    cdef cnp.float64_t[:, ::1] u = u_arr, v = v_arr, ub = ub_arr, vb = vb_arr
    cdef Py_ssize_t n, r, c
    cdef double t, gx, gy
    with nogil:
        for n in range(iterations):
            _neighbour_mean(u, ub)
            _neighbour_mean(v, vb)
            for r in range(H):
                for c in range(W):
                    gx = ix[r, c]
                    gy = iy[r, c]
                    t = (gx * ub[r, c] + gy * vb[r, c] + it[r, c]) / (alpha2 + gx * gx + gy * gy)
                    u[r, c] = ub[r, c] - gx * t
                    v[r, c] = vb[r, c] - gy * t
    return u_arr, v_arr
