"""Naive nested-loop convolution, kept as an in-repo oracle for the fast
backends.  Deliberately slow and literal; only tests should call it."""

from __future__ import annotations

import numpy as np


def conv2d_reference(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                     stride: int = 1, padding: int = 0) -> np.ndarray:
    bsz, cin, hin, win = x.shape
    cout, _, kh, kw = w.shape
    ho = (hin + 2 * padding - kh) // stride + 1
    wo = (win + 2 * padding - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo), dtype=np.float64)
    for n in range(bsz):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for di in range(kh):
                            for dj in range(kw):
                                yi = i * stride + di - padding
                                xj = j * stride + dj - padding
                                if 0 <= yi < hin and 0 <= xj < win:
                                    acc += x[n, c, yi, xj] * w[o, c, di, dj]
                    out[n, o, i, j] = acc
    return out
