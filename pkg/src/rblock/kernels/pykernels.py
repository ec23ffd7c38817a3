"""Pure-numpy layer kernels (im2col convolution, 2x2 max pooling).

This is the fallback backend; the compiled extension in ``_ckernels`` covers
the same call signatures.  All arrays are float64, NCHW layout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "numpy"


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """All kh x kw patches of the padded input: (B, C, Ho, Wo, kh, kw)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, b, stride=1, padding=0):
    win = _windows(x, w.shape[2], w.shape[3], stride, padding)
    out = np.einsum("bchwij,ocij->bohw", win, w, optimize=True)
    out += b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, w, grad_out, stride=1, padding=0):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(x, kh, kw, stride, padding)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_w = np.einsum("bchwij,bohw->ocij", win, grad_out, optimize=True)

    grad_cols = np.einsum("ocij,bohw->bchwij", w, grad_out, optimize=True)
    bsz, cin, hin, win_ = x.shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    gx = np.zeros((bsz, cin, hin + 2 * padding, win_ + 2 * padding), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += grad_cols[:, :, :, :, i, j]
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gx), np.ascontiguousarray(grad_w), grad_b


def _pool_windows(x):
    bsz, c, h, w = x.shape
    return x.reshape(bsz, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, h // 2, w // 2, 4)


def maxpool2_forward(x):
    """2x2 max pool, stride 2.  Returns (out, argmax) with argmax in
    window-row-major order; ties go to the first maximum."""
    win = _pool_windows(x)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool2_backward(grad_out, argmax, in_shape):
    bsz, c, h, w = in_shape
    gwin = np.zeros((bsz, c, h // 2, w // 2, 4), dtype=np.float64)
    np.put_along_axis(gwin, argmax[..., None], grad_out[..., None], axis=-1)
    gx = gwin.reshape(bsz, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, h, w)
    return np.ascontiguousarray(gx)
