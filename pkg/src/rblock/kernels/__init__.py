"""Layer kernel backend selection.

The compiled Cython extension is preferred when it built; the pure-numpy
implementation is the fallback.  ``RBLOCK_PURE_PYTHON=1`` forces the
fallback regardless.  Both backends share signatures and tie-breaking rules,
so either one satisfies the same tests.
"""

import os

from . import pykernels

if os.environ.get("RBLOCK_PURE_PYTHON"):
    _impl = pykernels
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = pykernels

BACKEND = _impl.BACKEND

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "pykernels",
]
