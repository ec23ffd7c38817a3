# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled layer kernels: C-level im2col/col2im around one BLAS matmul,
plus loop-based 2x2 max pooling.

Same signatures as ``pykernels``; selected automatically at import when the
extension built.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef void _im2col_fill(double[:, :, :, ::1] x, double[:, :, ::1] cols,
                       Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                       Py_ssize_t padding, Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t bsz = x.shape[0], cin = x.shape[1], hin = x.shape[2], win = x.shape[3]
    cdef Py_ssize_t n, c, di, dj, i, j, yi, xj, r
    for n in range(bsz):
        for c in range(cin):
            for di in range(kh):
                for dj in range(kw):
                    r = (c * kh + di) * kw + dj
                    for i in range(ho):
                        yi = i * stride + di - padding
                        if yi < 0 or yi >= hin:
                            for j in range(wo):
                                cols[n, r, i * wo + j] = 0.0
                            continue
                        for j in range(wo):
                            xj = j * stride + dj - padding
                            if xj < 0 or xj >= win:
                                cols[n, r, i * wo + j] = 0.0
                            else:
                                cols[n, r, i * wo + j] = x[n, c, yi, xj]


cdef void _col2im_add(double[:, :, ::1] cols, double[:, :, :, ::1] gx,
                      Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                      Py_ssize_t padding, Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t bsz = gx.shape[0], cin = gx.shape[1], hin = gx.shape[2], win = gx.shape[3]
    cdef Py_ssize_t n, c, di, dj, i, j, yi, xj, r
    for n in range(bsz):
        for c in range(cin):
            for di in range(kh):
                for dj in range(kw):
                    r = (c * kh + di) * kw + dj
                    for i in range(ho):
                        yi = i * stride + di - padding
                        if yi < 0 or yi >= hin:
                            continue
                        for j in range(wo):
                            xj = j * stride + dj - padding
                            if 0 <= xj < win:
                                gx[n, c, yi, xj] += cols[n, r, i * wo + j]


def conv2d_forward(x, w, b, int stride=1, int padding=0):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t bsz = x.shape[0], hin = x.shape[2], win = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (hin + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t wo = (win + 2 * padding - kw) // stride + 1
    cols = np.empty((bsz, cin * kh * kw, ho * wo), dtype=np.float64)
    _im2col_fill(x, cols, kh, kw, stride, padding, ho, wo)
    out = np.matmul(w.reshape(cout, -1)[None, :, :], cols)
    out += np.asarray(b, dtype=np.float64)[None, :, None]
    return np.ascontiguousarray(out.reshape(bsz, cout, ho, wo))


def conv2d_backward(x, w, grad_out, int stride=1, int padding=0):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef Py_ssize_t bsz = x.shape[0], hin = x.shape[2], win = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = grad_out.shape[2], wo = grad_out.shape[3]
    cols = np.empty((bsz, cin * kh * kw, ho * wo), dtype=np.float64)
    _im2col_fill(x, cols, kh, kw, stride, padding, ho, wo)
    g2d = grad_out.reshape(bsz, cout, ho * wo)
    grad_b = g2d.sum(axis=(0, 2))
    grad_w = np.einsum("nol,nrl->or", g2d, cols, optimize=True).reshape(w.shape)
    grad_cols = np.ascontiguousarray(
        np.matmul(w.reshape(cout, -1).T[None, :, :], g2d))
    gx = np.zeros_like(x)
    _col2im_add(grad_cols, gx, kh, kw, stride, padding, ho, wo)
    return gx, np.ascontiguousarray(grad_w), grad_b


def maxpool2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t bsz = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    out_arr = np.empty((bsz, c, ho, wo), dtype=np.float64)
    idx_arr = np.empty((bsz, c, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, k, i, j, di, dj
    cdef double best, v
    cdef long long bi
    for n in range(bsz):
        for k in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = x[n, k, 2 * i, 2 * j]
                    bi = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[n, k, 2 * i + di, 2 * j + dj]
                            if v > best:
                                best = v
                                bi = 2 * di + dj
                    out[n, k, i, j] = best
                    idx[n, k, i, j] = bi
    return out_arr, idx_arr


def maxpool2_backward(double[:, :, :, ::1] grad_out, long long[:, :, :, ::1] argmax,
                      in_shape):
    cdef Py_ssize_t bsz = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    gx_arr = np.zeros((bsz, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, k, i, j
    cdef long long bi
    for n in range(bsz):
        for k in range(c):
            for i in range(ho):
                for j in range(wo):
                    bi = argmax[n, k, i, j]
                    gx[n, k, 2 * i + bi // 2, 2 * j + bi % 2] = grad_out[n, k, i, j]
    return gx_arr
