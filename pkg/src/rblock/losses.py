"""The mutual-learning objective: temperature-scaled softmax, cross-entropy
on raw logits, bidirectional KL between the two sub-models' tempered
distributions, and the combined per-batch loss with analytic gradients.

Per sample, sub-model i pays (1-alpha)*CE(z_i, y) + alpha*T^2*KL(p_j || p_i)
where p_i = softmax(z_i / T); the batch loss is the mean of the two
sub-model terms.  Cross-entropy deliberately uses the untempered logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    temperature: float = 3.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")


@dataclass
class LossBreakdown:
    total: float
    ce1: float
    ce2: float
    kl12: float  # KL(p1 || p2), the consistency term paid by sub-model 2
    kl21: float  # KL(p2 || p1), paid by sub-model 1


def softmax_temp(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Stable softmax over the last axis after dividing logits by T."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood of the labels under softmax(logits).

    Returns (per-sample losses, gradient w.r.t. logits); logits are (B, K),
    labels are integer class ids in [0, K).
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    bsz, kappa = logits.shape
    if labels.shape != (bsz,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {bsz}")
    if labels.min() < 0 or labels.max() >= kappa:
        raise ValueError(f"labels must lie in [0, {kappa}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    probs = softmax_temp(logits, 1.0)
    picked = probs[np.arange(bsz), labels]
    losses = -np.log(np.maximum(picked, _EPS))
    grad = probs.copy()
    grad[np.arange(bsz), labels] -= 1.0
    return losses, grad


def kl_divergence(p_from: np.ndarray, p_to: np.ndarray) -> np.ndarray:
    """KL(p_from || p_to) along the last axis, with probabilities clamped
    at 1e-12 before the logs."""
    p_from = np.asarray(p_from, dtype=np.float64)
    p_to = np.asarray(p_to, dtype=np.float64)
    for name, arr in (("p_from", p_from), ("p_to", p_to)):
        sums = arr.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError(f"{name} is not normalized (sum deviates from 1 by > 1e-6)")
    a = np.maximum(p_from, _EPS)
    b = np.maximum(p_to, _EPS)
    return (p_from * (np.log(a) - np.log(b))).sum(axis=-1)


def _kl_grads(p_from, p_to, temperature):
    """Gradients of KL(p_from || p_to) w.r.t. the logits behind each
    argument (both tempered by T)."""
    u = np.log(np.maximum(p_from, _EPS)) - np.log(np.maximum(p_to, _EPS))
    # d/dz_to: classic soft-target gradient.
    g_to = (p_to - p_from) / temperature
    # d/dz_from: chain rule through the softmax of the first argument.
    proj = (p_from * u).sum(axis=-1, keepdims=True)
    g_from = p_from * (u - proj) / temperature
    return g_from, g_to


def rblock_loss(
    logits1: np.ndarray,
    logits2: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights,
    detach_peer: bool = False,
):
    """Batch loss and gradients w.r.t. both logit sets.

    With detach_peer the first (target) distribution of each KL term is
    treated as a constant, the classic deep-mutual-learning reading; by
    default gradients flow through both distributions since both sub-models
    share parameters.
    """
    logits1 = np.atleast_2d(np.asarray(logits1, dtype=np.float64))
    logits2 = np.atleast_2d(np.asarray(logits2, dtype=np.float64))
    if logits1.shape != logits2.shape:
        raise ValueError(f"logit shapes differ: {logits1.shape} vs {logits2.shape}")
    bsz = logits1.shape[0]
    alpha, temp = weights.alpha, weights.temperature

    ce1, gce1 = cross_entropy(logits1, labels)
    ce2, gce2 = cross_entropy(logits2, labels)
    p1 = softmax_temp(logits1, temp)
    p2 = softmax_temp(logits2, temp)
    kl12 = kl_divergence(p1, p2)
    kl21 = kl_divergence(p2, p1)

    # J1 pays KL(p2 || p1), J2 pays KL(p1 || p2).
    g1 = (1 - alpha) * gce1 / bsz
    g2 = (1 - alpha) * gce2 / bsz
    g21_from, g21_to = _kl_grads(p2, p1, temp)
    g12_from, g12_to = _kl_grads(p1, p2, temp)
    coeff = alpha * temp * temp / bsz
    g1 += coeff * g21_to
    g2 += coeff * g12_to
    if not detach_peer:
        g2 += coeff * g21_from
        g1 += coeff * g12_from

    mean_ce1 = float(ce1.mean())
    mean_ce2 = float(ce2.mean())
    mean_kl12 = float(kl12.mean())
    mean_kl21 = float(kl21.mean())
    total = (1 - alpha) * (mean_ce1 + mean_ce2) + alpha * temp * temp * (
        mean_kl12 + mean_kl21
    )
    breakdown = LossBreakdown(
        total=float(total), ce1=mean_ce1, ce2=mean_ce2, kl12=mean_kl12, kl21=mean_kl21
    )
    return breakdown, g1, g2
