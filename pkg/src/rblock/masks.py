"""Mask construction: the three single-mask methods (dropout, spatial
dropout, block dropout) and the six sub-model pair strategies, including the
two complementary samplers BDropDML (channel split of one shared block
pattern) and SDropDML (spatial split of dropped channels).

Masks are keep-masks shaped (1, c, m, n) for broadcasting over the batch
axis.  A binary keep-mask with kept proportion s is normalized to value 1/s
on kept units, so every normalized mask has mean exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import gamma as ga
from .rng import RngStream, bernoulli_sample

SINGLE_METHODS = ("dropout", "spatial_dropout", "dropblock")
PAIR_METHODS = (
    "rdrop_pair",
    "cdrop_pair",
    "rspatial_pair",
    "rdropblock_pair",
    "bdropdml",
    "sdropdml",
)
METHODS = SINGLE_METHODS + PAIR_METHODS


@dataclass(frozen=True)
class DropSpec:
    """Which mask method to run and with what knobs."""

    method: str
    p: float = 0.2
    b_size: int = 3
    gamma_mode: str = "corrected"
    center_region: str = "full"
    schedule: str = "constant"  # "constant" or "linear_ramp"
    per_sample: bool = False

    def __post_init__(self):
        if self.method not in METHODS and self.method != "baseline":
            raise ValueError(f"unknown mask method {self.method!r}")
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"p must lie in [0, 1), got {self.p}")
        if self.b_size < 1 or self.b_size % 2 == 0:
            raise ValueError(f"b_size must be odd, got {self.b_size}")
        if self.gamma_mode not in ga.GAMMA_MODES:
            raise ValueError(f"gamma_mode must be one of {ga.GAMMA_MODES}")
        if self.schedule not in ("constant", "linear_ramp"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.method == "cdrop_pair" and self.p != 0.5:
            raise ValueError("cdrop_pair is only defined for p = 0.5")

    def p_at(self, epoch: int, total_epochs: int) -> float:
        """Drop probability in effect at the given epoch; linear_ramp goes
        from 0 at epoch 0 to p at the final epoch."""
        if self.schedule == "constant":
            return self.p
        return self.p * epoch / total_epochs


@dataclass
class MaskPair:
    """Normalized keep-masks for the two sub-models; keep2 is None for the
    single-mask methods."""

    keep1: np.ndarray
    keep2: np.ndarray | None
    scale1: float
    scale2: float | None
    raw_drop_count1: int
    raw_drop_count2: int | None
    degenerate_count: int = 0


def _gamma_for(p: float, geom: ga.BlockGeometry, mode: str) -> float:
    if mode == "simple":
        return min(1.0, ga.gamma_simple(p, geom.b_size))
    if mode == "corrected":
        return min(1.0, ga.gamma_corrected(p, geom))
    return ga.solve_gamma_exact(p, geom, tol=1e-12)


@lru_cache(maxsize=None)
def _gamma_half(m: int, n: int, b_size: int) -> float:
    """gamma giving a 50% marginal drop rate; falls back to the corrected
    estimate on grids too small for the exact formula."""
    geom = ga.BlockGeometry(m, n, b_size)
    if geom.supports_exact():
        return ga.solve_gamma_exact(0.5, geom, tol=1e-12)
    return min(1.0, ga.gamma_corrected(0.5, geom))


def dropblock_pattern(
    geom: ga.BlockGeometry,
    gamma: float,
    rng: RngStream,
    center_region: str = "full",
) -> np.ndarray:
    """One binary (m, n) drop pattern: Bernoulli(gamma) centers expanded to
    clipped b x b squares."""
    if center_region not in ("full", "valid"):
        raise ValueError(f"center_region must be 'full' or 'valid', got {center_region}")
    centers = bernoulli_sample(rng, (geom.m, geom.n), gamma)
    if center_region == "valid":
        k = geom.k
        allowed = np.zeros((geom.m, geom.n))
        allowed[k : geom.m - k, k : geom.n - k] = 1.0
        centers = centers * allowed
    return ga.expand_centers(centers, geom.b_size)


def _normalize(binary_keep: np.ndarray):
    """(normalized keep, scale, raw drop count, degenerate flag)."""
    total = binary_keep.size
    kept = int(binary_keep.sum())
    dropped = total - kept
    if kept == 0:
        return np.ones_like(binary_keep), 1.0, dropped, 1
    s = kept / total
    return binary_keep / s, 1.0 / s, dropped, 0


def _as4(mask_cmn: np.ndarray) -> np.ndarray:
    return mask_cmn[None, :, :, :]


def _geom(shape, b_size) -> ga.BlockGeometry:
    m, n, _c = shape
    return ga.BlockGeometry(m, n, b_size)


def _single_drop(shape, spec: DropSpec, rng: RngStream) -> np.ndarray:
    """Binary (c, m, n) drop indicator for one single-mask draw."""
    m, n, c = shape
    if spec.method == "dropout":
        return bernoulli_sample(rng, (c, m, n), spec.p)
    if spec.method == "spatial_dropout":
        chans = bernoulli_sample(rng, (c,), spec.p)
        return np.broadcast_to(chans[:, None, None], (c, m, n)).copy()
    if spec.method == "dropblock":
        geom = _geom(shape, spec.b_size)
        g = _gamma_for(spec.p, geom, spec.gamma_mode)
        return np.stack(
            [dropblock_pattern(geom, g, rng, spec.center_region) for _ in range(c)]
        )
    raise ValueError(f"{spec.method!r} is not a single-mask method")


def sample_single(shape, spec: DropSpec, rng: RngStream) -> MaskPair:
    drop = _single_drop(shape, spec, rng)
    keep, scale, dropped, degen = _normalize(1.0 - drop)
    return MaskPair(_as4(keep), None, scale, None, dropped, None, degen)


def sample_bdropdml(shape, spec: DropSpec, rng: RngStream) -> MaskPair:
    """One shared spatial block pattern, split across channels: each channel
    assigns the pattern's drops to exactly one of the two sub-models."""
    m, n, c = shape
    geom = _geom(shape, spec.b_size)
    g = _gamma_for(spec.p, geom, spec.gamma_mode)
    pattern = dropblock_pattern(geom, g, rng, spec.center_region)
    l1 = bernoulli_sample(rng, (c,), 0.5)
    l2 = 1.0 - l1
    drop1 = pattern[None, :, :] * l1[:, None, None]
    drop2 = pattern[None, :, :] * l2[:, None, None]
    return _finish_pair(drop1, drop2)


def sample_sdropdml(shape, spec: DropSpec, rng: RngStream) -> MaskPair:
    """Channels drop w.p. p; on each dropped channel the plane is split
    between the sub-models by a half-rate block pattern and its complement."""
    m, n, c = shape
    geom = _geom(shape, spec.b_size)
    chans = bernoulli_sample(rng, (c,), spec.p)
    g_half = _gamma_half(m, n, spec.b_size)
    m1 = dropblock_pattern(geom, g_half, rng, spec.center_region)
    m2 = 1.0 - m1
    drop1 = chans[:, None, None] * m1[None, :, :]
    drop2 = chans[:, None, None] * m2[None, :, :]
    return _finish_pair(drop1, drop2)


def sample_pair_baselines(shape, spec: DropSpec, rng: RngStream) -> MaskPair:
    m, n, c = shape
    if spec.method == "rdrop_pair":
        single = replace(spec, method="dropout")
        drop1 = _single_drop(shape, single, rng)
        drop2 = _single_drop(shape, single, rng)
    elif spec.method == "cdrop_pair":
        d = bernoulli_sample(rng, (c, m, n), 0.5)
        drop1, drop2 = d, 1.0 - d
    elif spec.method == "rspatial_pair":
        single = replace(spec, method="spatial_dropout")
        drop1 = _single_drop(shape, single, rng)
        drop2 = _single_drop(shape, single, rng)
    elif spec.method == "rdropblock_pair":
        single = replace(spec, method="dropblock")
        drop1 = _single_drop(shape, single, rng)
        drop2 = _single_drop(shape, single, rng)
    else:
        raise ValueError(f"{spec.method!r} is not a baseline pair method")
    return _finish_pair(drop1, drop2)


def _finish_pair(drop1: np.ndarray, drop2: np.ndarray) -> MaskPair:
    keep1, scale1, d1, g1 = _normalize(1.0 - drop1)
    keep2, scale2, d2, g2 = _normalize(1.0 - drop2)
    return MaskPair(_as4(keep1), _as4(keep2), scale1, scale2, d1, d2, g1 + g2)


def sample_mask(shape, spec: DropSpec, rng: RngStream) -> MaskPair:
    """Dispatch on spec.method; shape is (m, n, c)."""
    if spec.method in SINGLE_METHODS:
        return sample_single(shape, spec, rng)
    if spec.method == "bdropdml":
        return sample_bdropdml(shape, spec, rng)
    if spec.method == "sdropdml":
        return sample_sdropdml(shape, spec, rng)
    if spec.method in PAIR_METHODS:
        return sample_pair_baselines(shape, spec, rng)
    raise ValueError(f"unknown mask method {spec.method!r}")


def apply_mask(activations: np.ndarray, keep: np.ndarray) -> np.ndarray:
    _check_broadcast(activations.shape, keep.shape)
    return activations * keep


def apply_mask_backward(grad_out: np.ndarray, keep: np.ndarray) -> np.ndarray:
    _check_broadcast(grad_out.shape, keep.shape)
    return grad_out * keep


def _check_broadcast(a_shape, k_shape):
    if len(a_shape) != len(k_shape):
        raise ValueError(f"rank mismatch: activations {a_shape} vs mask {k_shape}")
    for da, dk in zip(a_shape[1:], k_shape[1:]):
        if da != dk:
            raise ValueError(f"shape mismatch: activations {a_shape} vs mask {k_shape}")
    if k_shape[0] not in (1, a_shape[0]):
        raise ValueError(f"mask batch dim must be 1 or {a_shape[0]}, got {k_shape[0]}")


def mask_to_export_dict(shape, spec: DropSpec, pair: MaskPair, seed: int) -> dict:
    """JSON export layout; keep arrays flattened in (m, n, c) row-major
    order to match the declared shape."""
    m, n, c = shape

    def flat(keep):
        if keep is None:
            return None
        return [float(v) for v in np.transpose(keep[0], (1, 2, 0)).ravel()]

    return {
        "shape": [m, n, c],
        "method": spec.method,
        "p": spec.p,
        "b_size": spec.b_size,
        "keep1": flat(pair.keep1),
        "keep2": flat(pair.keep2),
        "scale1": pair.scale1,
        "scale2": pair.scale2,
        "seed": seed,
    }
