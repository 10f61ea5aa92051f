# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; drop-in replacement for ``_fallback``.

Parallel loops are arranged so that every output cell is written by exactly
one thread with a fixed serial reduction order, which keeps results bitwise
identical to the single-threaded run whatever the thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange

cnp.import_array()

BACKEND = "cython"

cdef double _INF = 1e15


cdef inline Py_ssize_t _clamp(Py_ssize_t v, Py_ssize_t hi) nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


def conv3x3_fwd(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w, const double[::1] b):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0]
    y_arr = np.empty((n, cout, h, wd), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t job, i, co, ci, r, c, dy, dx, rr, cc
    cdef double acc, w00, w01, w02, w10, w11, w12, w20, w21, w22
    for job in prange(n * cout, nogil=True, schedule="static"):
        i = job // cout
        co = job % cout
        for r in range(h):
            for c in range(wd):
                y[i, co, r, c] = b[co]
        for ci in range(cin):
            w00 = w[co, ci, 0, 0]; w01 = w[co, ci, 0, 1]; w02 = w[co, ci, 0, 2]
            w10 = w[co, ci, 1, 0]; w11 = w[co, ci, 1, 1]; w12 = w[co, ci, 1, 2]
            w20 = w[co, ci, 2, 0]; w21 = w[co, ci, 2, 1]; w22 = w[co, ci, 2, 2]
            for r in range(1, h - 1):
                for c in range(1, wd - 1):
                    y[i, co, r, c] = y[i, co, r, c] + (
                        w00 * x[i, ci, r - 1, c - 1] + w01 * x[i, ci, r - 1, c] + w02 * x[i, ci, r - 1, c + 1]
                        + w10 * x[i, ci, r, c - 1] + w11 * x[i, ci, r, c] + w12 * x[i, ci, r, c + 1]
                        + w20 * x[i, ci, r + 1, c - 1] + w21 * x[i, ci, r + 1, c] + w22 * x[i, ci, r + 1, c + 1]
                    )
            for r in range(h):
                for c in range(wd):
                    if r > 0 and r < h - 1 and c > 0 and c < wd - 1:
                        continue
                    acc = 0.0
                    for dy in range(3):
                        rr = _clamp(r + dy - 1, h - 1)
                        for dx in range(3):
                            cc = _clamp(c + dx - 1, wd - 1)
                            acc = acc + w[co, ci, dy, dx] * x[i, ci, rr, cc]
                    y[i, co, r, c] = y[i, co, r, c] + acc
    return y_arr


def conv3x3_bwd(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w, const double[:, :, :, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0]
    gx_arr = np.zeros((n, cin, h, wd), dtype=np.float64)
    gw_arr = np.zeros((cout, cin, 3, 3), dtype=np.float64)
    gb_arr = np.zeros(cout, dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t job, i, co, ci, r, c, dy, dx, rr, cc
    cdef double g, acc
    cdef double w00, w01, w02, w10, w11, w12, w20, w21, w22

    # input gradient: one thread owns one (image, in-channel) slice
    for job in prange(n * cin, nogil=True, schedule="static"):
        i = job // cin
        ci = job % cin
        for co in range(cout):
            w00 = w[co, ci, 0, 0]; w01 = w[co, ci, 0, 1]; w02 = w[co, ci, 0, 2]
            w10 = w[co, ci, 1, 0]; w11 = w[co, ci, 1, 1]; w12 = w[co, ci, 1, 2]
            w20 = w[co, ci, 2, 0]; w21 = w[co, ci, 2, 1]; w22 = w[co, ci, 2, 2]
            for r in range(1, h - 1):
                for c in range(1, wd - 1):
                    g = gy[i, co, r, c]
                    gx[i, ci, r - 1, c - 1] += g * w00
                    gx[i, ci, r - 1, c] += g * w01
                    gx[i, ci, r - 1, c + 1] += g * w02
                    gx[i, ci, r, c - 1] += g * w10
                    gx[i, ci, r, c] += g * w11
                    gx[i, ci, r, c + 1] += g * w12
                    gx[i, ci, r + 1, c - 1] += g * w20
                    gx[i, ci, r + 1, c] += g * w21
                    gx[i, ci, r + 1, c + 1] += g * w22
            for r in range(h):
                for c in range(wd):
                    if r > 0 and r < h - 1 and c > 0 and c < wd - 1:
                        continue
                    g = gy[i, co, r, c]
                    for dy in range(3):
                        rr = _clamp(r + dy - 1, h - 1)
                        for dx in range(3):
                            cc = _clamp(c + dx - 1, wd - 1)
                            gx[i, ci, rr, cc] += g * w[co, ci, dy, dx]

    # weight gradient: one thread owns one (out-channel, in-channel) cell
    for job in prange(cout * cin, nogil=True, schedule="static"):
        co = job // cin
        ci = job % cin
        for dy in range(3):
            for dx in range(3):
                acc = 0.0
                for i in range(n):
                    for r in range(h):
                        rr = _clamp(r + dy - 1, h - 1)
                        for c in range(wd):
                            cc = _clamp(c + dx - 1, wd - 1)
                            acc = acc + gy[i, co, r, c] * x[i, ci, rr, cc]
                gw[co, ci, dy, dx] = acc

    cdef Py_ssize_t co2
    for co2 in prange(cout, nogil=True, schedule="static"):
        for i in range(n):
            for r in range(h):
                for c in range(wd):
                    gb[co2] += gy[i, co2, r, c]
    return gx_arr, gw_arr, gb_arr


def maxpool2_fwd(const double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t hh = h // 2, ww = w // 2
    y_arr = np.empty((n, c, hh, ww), dtype=np.float64)
    idx_arr = np.empty((n, c, hh, ww), dtype=np.int8)
    cdef double[:, :, :, ::1] y = y_arr
    cdef signed char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t i, ch, r, cc, k, best
    cdef double v, vk
    with nogil:
        for i in range(n):
            for ch in range(c):
                for r in range(hh):
                    for cc in range(ww):
                        best = 0
                        v = x[i, ch, 2 * r, 2 * cc]
                        for k in range(1, 4):
                            vk = x[i, ch, 2 * r + (k >> 1), 2 * cc + (k & 1)]
                            if vk > v:
                                v = vk
                                best = k
                        y[i, ch, r, cc] = v
                        idx[i, ch, r, cc] = <signed char> best
    return y_arr, idx_arr


def maxpool2_bwd(const signed char[:, :, :, ::1] idx, const double[:, :, :, ::1] gy):
    cdef Py_ssize_t n = gy.shape[0], c = gy.shape[1], hh = gy.shape[2], ww = gy.shape[3]
    gx_arr = np.zeros((n, c, hh * 2, ww * 2), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t i, ch, r, cc, k
    with nogil:
        for i in range(n):
            for ch in range(c):
                for r in range(hh):
                    for cc in range(ww):
                        k = idx[i, ch, r, cc]
                        gx[i, ch, 2 * r + (k >> 1), 2 * cc + (k & 1)] = gy[i, ch, r, cc]
    return gx_arr


def upsample2_fwd(const double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    y_arr = np.empty((n, c, h * 2, w * 2), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t i, ch, r, cc
    cdef double v
    with nogil:
        for i in range(n):
            for ch in range(c):
                for r in range(h):
                    for cc in range(w):
                        v = x[i, ch, r, cc]
                        y[i, ch, 2 * r, 2 * cc] = v
                        y[i, ch, 2 * r, 2 * cc + 1] = v
                        y[i, ch, 2 * r + 1, 2 * cc] = v
                        y[i, ch, 2 * r + 1, 2 * cc + 1] = v
    return y_arr


def upsample2_bwd(const double[:, :, :, ::1] gy):
    cdef Py_ssize_t n = gy.shape[0], c = gy.shape[1], h = gy.shape[2] // 2, w = gy.shape[3] // 2
    gx_arr = np.empty((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t i, ch, r, cc
    with nogil:
        for i in range(n):
            for ch in range(c):
                for r in range(h):
                    for cc in range(w):
                        gx[i, ch, r, cc] = (
                            gy[i, ch, 2 * r, 2 * cc]
                            + gy[i, ch, 2 * r, 2 * cc + 1]
                            + gy[i, ch, 2 * r + 1, 2 * cc]
                            + gy[i, ch, 2 * r + 1, 2 * cc + 1]
                        )
    return gx_arr


def edt_sq_pass(const double[:, ::1] f):
    cdef Py_ssize_t h = f.shape[0], w = f.shape[1]
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    v_arr = np.zeros(w, dtype=np.intp)
    z_arr = np.empty(w + 1, dtype=np.float64)
    cdef Py_ssize_t[::1] v = v_arr
    cdef double[::1] z = z_arr
    cdef Py_ssize_t r, q, p, k
    cdef double s, fq
    with nogil:
        for r in range(h):
            k = 0
            v[0] = 0
            z[0] = -_INF
            z[1] = _INF
            for q in range(1, w):
                fq = f[r, q] + q * q
                while True:
                    p = v[k]
                    s = (fq - (f[r, p] + p * p)) / (2.0 * q - 2.0 * p)
                    if s <= z[k]:
                        k -= 1
                    else:
                        break
                k += 1
                v[k] = q
                z[k] = s
                z[k + 1] = _INF
            k = 0
            for q in range(w):
                while z[k + 1] < q:
                    k += 1
                p = v[k]
                out[r, q] = (q - p) * (q - p) + f[r, p]
    return out_arr
