# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython warp kernels: per-pixel loops over the same taps as warp_py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, floor, fmax, fmin

cnp.import_array()


def warp_bilinear(const double[:, :, ::1] image, const double[:, ::1] src_u, const double[:, ::1] src_v):
    cdef Py_ssize_t nch = image.shape[0]
    cdef Py_ssize_t n = image.shape[1]
    out_arr = np.empty((nch, n, n))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, p, q, i0, j0
    cdef double su, sv, i0f, j0f, fu, fv, w00, w10, w01, w11

    for p in range(n):
        for q in range(n):
            su = fmin(fmax(src_u[p, q], 0.0), n - 1.0)
            sv = fmin(fmax(src_v[p, q], 0.0), n - 1.0)
            i0f = fmin(floor(su), n - 2.0)
            j0f = fmin(floor(sv), n - 2.0)
            fu = su - i0f
            fv = sv - j0f
            i0 = <Py_ssize_t>i0f
            j0 = <Py_ssize_t>j0f
            w00 = (1.0 - fu) * (1.0 - fv)
            w10 = fu * (1.0 - fv)
            w01 = (1.0 - fu) * fv
            w11 = fu * fv
            for ch in range(nch):
                out[ch, p, q] = (
                    image[ch, i0, j0] * w00
                    + image[ch, i0 + 1, j0] * w10
                    + image[ch, i0, j0 + 1] * w01
                    + image[ch, i0 + 1, j0 + 1] * w11
                )
    return out_arr


def warp_gaussian(const double[:, :, ::1] image, const double[:, ::1] src_u, const double[:, ::1] src_v,
                  double sigma, int radius):
    cdef Py_ssize_t nch = image.shape[0]
    cdef Py_ssize_t n = image.shape[1]
    out_arr = np.empty((nch, n, n))
    cdef double[:, :, ::1] out = out_arr
    acc_arr = np.zeros(nch)
    cdef double[::1] acc = acc_arr
    cdef Py_ssize_t ch, p, q, ci, cj, gi, gj
    cdef int di, dj
    cdef double su, sv, du, dv, w, wsum
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)

    for p in range(n):
        for q in range(n):
            su = fmin(fmax(src_u[p, q], 0.0), n - 1.0)
            sv = fmin(fmax(src_v[p, q], 0.0), n - 1.0)
            ci = <Py_ssize_t>floor(su)
            cj = <Py_ssize_t>floor(sv)
            wsum = 0.0
            for ch in range(nch):
                acc[ch] = 0.0
            for di in range(-radius, radius + 2):
                gi = ci + di
                if gi < 0 or gi > n - 1:
                    continue
                du = su - gi
                for dj in range(-radius, radius + 2):
                    gj = cj + dj
                    if gj < 0 or gj > n - 1:
                        continue
                    dv = sv - gj
                    w = exp(-(du * du + dv * dv) * inv2s2)
                    wsum += w
                    for ch in range(nch):
                        acc[ch] += w * image[ch, gi, gj]
            for ch in range(nch):
                out[ch, p, q] = acc[ch] / wsum
    return out_arr
