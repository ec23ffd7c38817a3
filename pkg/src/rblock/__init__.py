"""R-Block structured dropout: complementary mask pair samplers, exact
block-probability analytics with a Monte Carlo oracle, the mutual-learning
loss, and a small from-scratch CNN training harness."""

from .gamma import (
    BlockGeometry,
    gamma_corrected,
    gamma_simple,
    mc_drop_rate,
    p_exact,
    p_no_margin,
    p_valid_region,
    solve_gamma_exact,
)
from .kernels import BACKEND
from .losses import LossWeights, kl_divergence, rblock_loss, softmax_temp
from .masks import DropSpec, MaskPair, sample_mask
from .rng import RngStream, bernoulli_sample

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BlockGeometry",
    "DropSpec",
    "LossWeights",
    "MaskPair",
    "RngStream",
    "bernoulli_sample",
    "gamma_corrected",
    "gamma_simple",
    "kl_divergence",
    "mc_drop_rate",
    "p_exact",
    "p_no_margin",
    "p_valid_region",
    "rblock_loss",
    "sample_mask",
    "softmax_temp",
    "solve_gamma_exact",
]
