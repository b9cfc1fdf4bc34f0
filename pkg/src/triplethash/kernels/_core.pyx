# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel lane: convolution, pooling, and Hamming scan.

Semantics match ``triplethash.kernels.pure`` (see its module docstring for
the shared conventions). Convolutions run as single-pass C im2col/col2im
plus a direct BLAS dgemm call, which avoids the padding and reshaping
temporaries of the NumPy lane; pooling and the Hamming scan are plain
loops. All loops accumulate in a fixed order, so results are deterministic.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _matmul_rm(const double* a, const double* b, double* c,
                     int m, int k, int n) nogil:
    # row-major C(m,n) = A(m,k) @ B(k,n): swap operands for Fortran dgemm
    cdef double alpha = 1.0, beta = 0.0
    dgemm("N", "N", &n, &m, &k, &alpha, <double*>b, &n, <double*>a, &k,
          &beta, c, &n)


cdef void _matmul_at_b(const double* a, const double* b, double* c,
                       int m, int k, int n) nogil:
    # row-major C(m,n) = A(k,m)^T @ B(k,n)
    cdef double alpha = 1.0, beta = 0.0
    dgemm("N", "T", &n, &m, &k, &alpha, <double*>b, &n, <double*>a, &m,
          &beta, c, &n)

cdef unsigned char[256] _POP8

cdef void _init_pop8():
    cdef int i, v, c
    for i in range(256):
        v = i
        c = 0
        while v:
            c += v & 1
            v >>= 1
        _POP8[i] = <unsigned char>c

_init_pop8()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   int stride, int pad_top, int pad_left, int out_h, int out_w):
    cdef int n_im = x.shape[0], c_in = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef int f_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t m = <Py_ssize_t>n_im * out_h * out_w
    cdef int kk = c_in * kh * kw
    cols_arr = np.empty((m, kk))
    cdef double[:, ::1] cols = cols_arr
    _fill_cols(x, cols, kh, kw, stride, pad_top, pad_left, out_h, out_w)
    wt_arr = np.ascontiguousarray(np.asarray(w).reshape(f_out, kk).T)
    cdef double[:, ::1] wt = wt_arr
    outm_arr = np.empty((m, f_out))
    cdef double[:, ::1] outm = outm_arr
    if m > 0:
        _matmul_rm(&cols[0, 0], &wt[0, 0], &outm[0, 0], <int>m, kk, f_out)
    out_arr = np.empty((n_im, f_out, out_h, out_w))
    cdef double[:, :, :, ::1] out = out_arr
    cdef int n, f, oh, ow
    cdef Py_ssize_t r = 0
    for n in range(n_im):
        for oh in range(out_h):
            for ow in range(out_w):
                for f in range(f_out):
                    out[n, f, oh, ow] = outm[r, f]
                r += 1
    return out_arr


cdef void _fill_cols(double[:, :, :, ::1] x, double[:, ::1] cols,
                     int kh, int kw, int stride, int pad_top, int pad_left,
                     int out_h, int out_w) nogil:
    cdef int n_im = x.shape[0], c_in = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef int n, c, i, j, oh, ow, ih, iw
    cdef Py_ssize_t r = 0
    cdef double* row
    for n in range(n_im):
        for oh in range(out_h):
            for ow in range(out_w):
                row = &cols[r, 0]
                for c in range(c_in):
                    for i in range(kh):
                        ih = oh * stride - pad_top + i
                        for j in range(kw):
                            iw = ow * stride - pad_left + j
                            if 0 <= ih < h and 0 <= iw < wd:
                                row[0] = x[n, c, ih, iw]
                            else:
                                row[0] = 0.0
                            row += 1
                r += 1


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] gout, int stride, int pad_top, int pad_left,
                    bint need_gx=True):
    cdef int n_im = x.shape[0], c_in = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef int f_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int out_h = gout.shape[2], out_w = gout.shape[3]
    cdef Py_ssize_t m = <Py_ssize_t>n_im * out_h * out_w
    cdef int kk = c_in * kh * kw
    cols_arr = np.empty((m, kk))
    cdef double[:, ::1] cols = cols_arr
    _fill_cols(x, cols, kh, kw, stride, pad_top, pad_left, out_h, out_w)

    g2_arr = np.empty((m, f_out))
    cdef double[:, ::1] g2 = g2_arr
    cdef int n, f, c, i, j, oh, ow, ih, iw
    cdef Py_ssize_t r = 0
    for n in range(n_im):
        for oh in range(out_h):
            for ow in range(out_w):
                for f in range(f_out):
                    g2[r, f] = gout[n, f, oh, ow]
                r += 1

    gw_arr = np.empty((f_out, c_in, kh, kw))
    cdef double[:, :, :, ::1] gw = gw_arr
    if m > 0:
        _matmul_at_b(&g2[0, 0], &cols[0, 0], &gw[0, 0, 0, 0], f_out, <int>m, kk)
    else:
        gw_arr[...] = 0.0
    if not need_gx:
        return None, gw_arr

    gcols_arr = np.empty((m, kk))
    cdef double[:, ::1] gcols = gcols_arr
    w2_arr = np.ascontiguousarray(np.asarray(w).reshape(f_out, kk))
    cdef double[:, ::1] w2 = w2_arr
    if m > 0:
        _matmul_rm(&g2[0, 0], &w2[0, 0], &gcols[0, 0], <int>m, f_out, kk)
    gx_arr = np.zeros((n_im, c_in, h, wd))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef const double* row
    r = 0
    for n in range(n_im):
        for oh in range(out_h):
            for ow in range(out_w):
                row = &gcols[r, 0]
                for c in range(c_in):
                    for i in range(kh):
                        ih = oh * stride - pad_top + i
                        for j in range(kw):
                            iw = ow * stride - pad_left + j
                            if 0 <= ih < h and 0 <= iw < wd:
                                gx[n, c, ih, iw] += row[0]
                            row += 1
                r += 1
    return gx_arr, gw_arr


def maxpool2d_forward(double[:, :, :, ::1] x, int window, int stride,
                      int pad_top, int pad_left, int out_h, int out_w):
    cdef int n_im = x.shape[0], c_in = x.shape[1], h = x.shape[2], wd = x.shape[3]
    out_arr = np.empty((n_im, c_in, out_h, out_w))
    arg_arr = np.empty((n_im, c_in, out_h, out_w), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] arg = arg_arr
    cdef int n, c, oh, ow, i, j, ih, iw
    cdef double best, v
    cdef long long besti
    cdef double NEG_INF = -np.inf
    for n in range(n_im):
        for c in range(c_in):
            for oh in range(out_h):
                for ow in range(out_w):
                    best = NEG_INF
                    besti = -1
                    for i in range(window):
                        ih = oh * stride - pad_top + i
                        if ih < 0 or ih >= h:
                            continue
                        for j in range(window):
                            iw = ow * stride - pad_left + j
                            if iw < 0 or iw >= wd:
                                continue
                            v = x[n, c, ih, iw]
                            if v > best:
                                best = v
                                besti = <long long>ih * wd + iw
                    out[n, c, oh, ow] = best
                    arg[n, c, oh, ow] = besti
    return out_arr, arg_arr


def maxpool2d_backward(long long[:, :, :, ::1] arg, double[:, :, :, ::1] gout,
                       int h, int w):
    cdef int n_im = gout.shape[0], c_in = gout.shape[1]
    cdef int out_h = gout.shape[2], out_w = gout.shape[3]
    gx_arr = np.zeros((n_im, c_in, h, w))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef long long flat
    cdef int n, c, oh, ow
    for n in range(n_im):
        for c in range(c_in):
            for oh in range(out_h):
                for ow in range(out_w):
                    flat = arg[n, c, oh, ow]
                    gx[n, c, flat // w, flat % w] += gout[n, c, oh, ow]
    return gx_arr


def avgpool2d_forward(double[:, :, :, ::1] x, int window, int stride,
                      int pad_top, int pad_left, int out_h, int out_w):
    cdef int n_im = x.shape[0], c_in = x.shape[1], h = x.shape[2], wd = x.shape[3]
    out_arr = np.empty((n_im, c_in, out_h, out_w))
    cdef double[:, :, :, ::1] out = out_arr
    cdef int n, c, oh, ow, i, j, ih, iw, cnt
    cdef double acc
    for n in range(n_im):
        for c in range(c_in):
            for oh in range(out_h):
                for ow in range(out_w):
                    acc = 0.0
                    cnt = 0
                    for i in range(window):
                        ih = oh * stride - pad_top + i
                        if ih < 0 or ih >= h:
                            continue
                        for j in range(window):
                            iw = ow * stride - pad_left + j
                            if iw < 0 or iw >= wd:
                                continue
                            acc += x[n, c, ih, iw]
                            cnt += 1
                    out[n, c, oh, ow] = acc / cnt
    return out_arr


def avgpool2d_backward(double[:, :, :, ::1] gout, int h, int w,
                       int window, int stride, int pad_top, int pad_left):
    cdef int n_im = gout.shape[0], c_in = gout.shape[1]
    cdef int out_h = gout.shape[2], out_w = gout.shape[3]
    gx_arr = np.zeros((n_im, c_in, h, w))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef int n, c, oh, ow, i, j, ih, iw, cnt
    cdef double share
    for n in range(n_im):
        for c in range(c_in):
            for oh in range(out_h):
                for ow in range(out_w):
                    cnt = 0
                    for i in range(window):
                        ih = oh * stride - pad_top + i
                        if ih < 0 or ih >= h:
                            continue
                        for j in range(window):
                            iw = ow * stride - pad_left + j
                            if 0 <= iw < w:
                                cnt += 1
                    share = gout[n, c, oh, ow] / cnt
                    for i in range(window):
                        ih = oh * stride - pad_top + i
                        if ih < 0 or ih >= h:
                            continue
                        for j in range(window):
                            iw = ow * stride - pad_left + j
                            if iw < 0 or iw >= w:
                                continue
                            gx[n, c, ih, iw] += share
    return gx_arr


def hamming_distances(const unsigned char[:, ::1] codes, const unsigned char[::1] query):
    cdef Py_ssize_t n = codes.shape[0], nb = codes.shape[1]
    dist_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] dist = dist_arr
    cdef Py_ssize_t i, j
    cdef long long acc
    for i in range(n):
        acc = 0
        for j in range(nb):
            acc += _POP8[codes[i, j] ^ query[j]]
        dist[i] = acc
    return dist_arr
