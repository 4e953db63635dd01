# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels. Same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport zgemm

cnp.import_array()


def band_plv(pa_in, pb_in):
    cdef double complex[:, :, ::1] pa = np.ascontiguousarray(pa_in, dtype=np.complex128)
    cdef double complex[:, :, ::1] pb = np.ascontiguousarray(pb_in, dtype=np.complex128)
    cdef int B = pa.shape[0], C = pa.shape[1], T = pa.shape[2]
    cdef int Cb = pb.shape[1]
    prod_arr = np.empty((B, C, Cb), dtype=np.complex128)
    out_arr = np.empty((B, C, Cb), dtype=np.float64)
    cdef double complex[:, :, ::1] prod = prod_arr
    cdef double[:, :, ::1] out = out_arr
    cdef double complex one = 1.0, zero = 0.0
    cdef char transa = b'C', transb = b'N'
    cdef int b, i, j
    cdef double re, im
    for b in range(B):
        # row-major [C, T] is column-major [T, C]; conj(pb) @ pa^T lands as prod[b] row-major
        zgemm(&transa, &transb, &Cb, &C, &T, &one, &pb[b, 0, 0], &T,
              &pa[b, 0, 0], &T, &zero, &prod[b, 0, 0], &Cb)
        for i in range(C):
            for j in range(Cb):
                re = prod[b, i, j].real
                im = prod[b, i, j].imag
                out[b, i, j] = sqrt(re * re + im * im) / T
    return out_arr


def msc_mean(xa_in, xb_in):
    cdef double[:, :, :, ::1] xa = np.ascontiguousarray(xa_in, dtype=np.complex128).view(np.float64).reshape(
        xa_in.shape[0], xa_in.shape[1], xa_in.shape[2], 2)
    cdef double[:, :, :, ::1] xb = np.ascontiguousarray(xb_in, dtype=np.complex128).view(np.float64).reshape(
        xb_in.shape[0], xb_in.shape[1], xb_in.shape[2], 2)
    cdef Py_ssize_t S = xa.shape[0], C = xa.shape[1], F = xa.shape[2]
    cdef Py_ssize_t Cb = xb.shape[1]
    saa_arr = np.zeros((C, F), dtype=np.float64)
    sbb_arr = np.zeros((Cb, F), dtype=np.float64)
    out_arr = np.zeros((C, Cb), dtype=np.float64)
    cdef double[:, ::1] saa = saa_arr
    cdef double[:, ::1] sbb = sbb_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t s, i, j, f
    cdef double re, im, ar, ai, br, bi, den, acc
    for i in range(C):
        for f in range(F):
            acc = 0.0
            for s in range(S):
                acc += xa[s, i, f, 0] * xa[s, i, f, 0] + xa[s, i, f, 1] * xa[s, i, f, 1]
            saa[i, f] = acc
    for j in range(Cb):
        for f in range(F):
            acc = 0.0
            for s in range(S):
                acc += xb[s, j, f, 0] * xb[s, j, f, 0] + xb[s, j, f, 1] * xb[s, j, f, 1]
            sbb[j, f] = acc
    for i in range(C):
        for j in range(Cb):
            acc = 0.0
            for f in range(F):
                den = saa[i, f] * sbb[j, f]
                if den > 0.0:
                    re = 0.0
                    im = 0.0
                    for s in range(S):
                        ar = xa[s, i, f, 0]
                        ai = xa[s, i, f, 1]
                        br = xb[s, j, f, 0]
                        bi = xb[s, j, f, 1]
                        re += ar * br + ai * bi
                        im += ai * br - ar * bi
                    acc += (re * re + im * im) / den
            out[i, j] = acc / F
    return out_arr


def conv2d_forward(x_in, w_in, b_in):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, :, :, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef double[::1] bias = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef Py_ssize_t N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = H - kh + 1, Wo = W - kw + 1
    if w.shape[1] != Cin or bias.shape[0] != Cout or Ho < 1 or Wo < 1:
        raise ValueError("conv2d_forward: incompatible shapes")
    out_arr = np.empty((N, Cout, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, o, c, y, xx, u, v
    cdef double wt
    for n in range(N):
        for o in range(Cout):
            for y in range(Ho):
                for xx in range(Wo):
                    out[n, o, y, xx] = bias[o]
            for c in range(Cin):
                for u in range(kh):
                    for v in range(kw):
                        wt = w[o, c, u, v]
                        for y in range(Ho):
                            for xx in range(Wo):
                                out[n, o, y, xx] += wt * x[n, c, y + u, xx + v]
    return out_arr


def conv2d_backward(x_in, w_in, g_in):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, :, :, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(g_in, dtype=np.float64)
    cdef Py_ssize_t N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = g.shape[2], Wo = g.shape[3]
    if w.shape[1] != Cin or g.shape[0] != N or g.shape[1] != Cout or Ho != H - kh + 1 or Wo != W - kw + 1:
        raise ValueError("conv2d_backward: gradient shape does not match the forward output")
    gx_arr = np.zeros((N, Cin, H, W), dtype=np.float64)
    gw_arr = np.zeros((Cout, Cin, kh, kw), dtype=np.float64)
    gb_arr = np.zeros(Cout, dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t n, o, c, y, xx, u, v
    cdef double acc, wt
    for n in range(N):
        for o in range(Cout):
            for y in range(Ho):
                for xx in range(Wo):
                    gb[o] += g[n, o, y, xx]
            for c in range(Cin):
                for u in range(kh):
                    for v in range(kw):
                        wt = w[o, c, u, v]
                        acc = 0.0
                        for y in range(Ho):
                            for xx in range(Wo):
                                acc += g[n, o, y, xx] * x[n, c, y + u, xx + v]
                                gx[n, c, y + u, xx + v] += g[n, o, y, xx] * wt
                        gw[o, c, u, v] += acc
    return gx_arr, gw_arr, gb_arr
