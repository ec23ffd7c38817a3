"""Relationships between the per-unit drop probability p and the
block-center probability gamma for square-block masks on an m x n grid,
plus a Monte Carlo estimator that double-checks the closed forms.

Conventions: blocks have odd side b = 2k+1; centers are sampled over the
full grid and blocks are clipped at the borders.  The exact formula splits
the grid into an interior, four k x k corners, and four edge strips, and is
only valid when m, n > 2b (smaller grids fall back to Monte Carlo).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .rng import RngStream

__all__ = [
    "BlockGeometry",
    "GammaMode",
    "MaskStatsReport",
    "gamma_simple",
    "gamma_corrected",
    "p_exact",
    "p_no_margin",
    "p_valid_region",
    "solve_gamma_exact",
    "mc_drop_rate",
]

GAMMA_MODES = ("simple", "corrected", "exact")
GammaMode = str  # one of GAMMA_MODES


@dataclass(frozen=True)
class BlockGeometry:
    """Grid height m, width n, and odd block side b_size = 2k+1."""

    m: int
    n: int
    b_size: int

    def __post_init__(self):
        if self.b_size < 1 or self.b_size % 2 == 0:
            raise ValueError(f"b_size must be odd and >= 1, got {self.b_size}")
        if self.m < 1 or self.n < 1:
            raise ValueError(f"grid dims must be positive, got {self.m}x{self.n}")
        if self.b_size > min(self.m, self.n):
            raise ValueError(
                f"b_size {self.b_size} exceeds grid {self.m}x{self.n}"
            )

    @property
    def k(self) -> int:
        return (self.b_size - 1) // 2

    def supports_exact(self) -> bool:
        return self.m > 2 * self.b_size and self.n > 2 * self.b_size


def _check_unit(value: float, name: str):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def _qpow(gamma: float, exponent: float) -> float:
    """(1 - gamma)^exponent without cancellation at small gamma."""
    if exponent == 0:
        return 1.0
    if exponent == 1:
        return 1.0 - gamma
    if gamma >= 1.0:
        return 0.0
    return math.exp(exponent * math.log1p(-gamma))


def gamma_simple(p: float, b_size: int) -> float:
    """Small-gamma estimate ignoring border effects: gamma = p / b^2."""
    _check_unit(p, "p")
    if b_size < 1 or b_size % 2 == 0:
        raise ValueError(f"b_size must be odd and >= 1, got {b_size}")
    return p / (b_size * b_size)


def gamma_corrected(p: float, geom: BlockGeometry) -> float:
    """Estimate that restricts block centers to positions where the full
    block fits: gamma = p*m*n / (b^2 (m-b+1)(n-b+1))."""
    _check_unit(p, "p")
    b = geom.b_size
    return p * geom.m * geom.n / (b * b * (geom.m - b + 1) * (geom.n - b + 1))


def p_exact(gamma: float, geom: BlockGeometry) -> float:
    """Exact marginal drop probability of a unit for center probability gamma.

    Sum of interior, corner and edge contributions; the edge bracket is the
    expanded finite sum, which is finite at gamma = 0 where the textbook
    geometric-ratio form is 0/0.
    """
    _check_unit(gamma, "gamma")
    if not geom.supports_exact():
        raise ValueError(
            f"exact formula requires m, n > 2*b_size; got {geom.m}x{geom.n} with "
            f"b_size={geom.b_size} -- use mc_drop_rate for this geometry"
        )
    m, n, k = geom.m, geom.n, geom.k
    b = geom.b_size

    interior = (1 - 2 * k / m) * (1 - 2 * k / n) * (1 - _qpow(gamma, b * b))

    corner_sum = 0.0
    for i in range(1, k + 1):
        for j in range(1, k + 1):
            corner_sum += _qpow(gamma, (k + i) * (k + j))
    corner = 4 * (k * k / (m * n) - corner_sum / (m * n))

    edge_sum = 0.0
    for j in range(1, k + 1):
        edge_sum += 1 - _qpow(gamma, b * (k + j))
    edge = 2 * (1 / m + 1 / n - 4 * k / (m * n)) * edge_sum

    return interior + corner + edge


def p_no_margin(gamma: float, b_size: int) -> float:
    """Upper bound ignoring border clipping: p1 = 1 - (1-gamma)^{b^2}."""
    _check_unit(gamma, "gamma")
    return 1 - _qpow(gamma, b_size * b_size)


def p_valid_region(gamma: float, geom: BlockGeometry) -> float:
    """Lower bound when centers are restricted to the fully-fitting region."""
    _check_unit(gamma, "gamma")
    m, n, b = geom.m, geom.n, geom.b_size
    return (m - b + 1) * (n - b + 1) * (1 - _qpow(gamma, b * b)) / (m * n)


def solve_gamma_exact(p_target: float, geom: BlockGeometry, tol: float = 1e-12) -> float:
    """Invert p_exact by bisection on [0, 1].

    p_exact is strictly increasing in gamma, so bisection always converges;
    the simple and corrected estimates seed the bracket.
    """
    _check_unit(p_target, "p_target")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if p_target == 0.0:
        return 0.0
    if p_target == 1.0:
        return 1.0

    lo, hi = 0.0, 1.0
    for seed in (gamma_simple(p_target, geom.b_size), gamma_corrected(p_target, geom)):
        if lo < seed < hi:
            if p_exact(seed, geom) < p_target:
                lo = seed
            else:
                hi = seed

    gamma = 0.5 * (lo + hi)
    for _ in range(200):
        gamma = 0.5 * (lo + hi)
        residual = p_exact(gamma, geom) - p_target
        if abs(residual) <= tol:
            return gamma
        if residual < 0:
            lo = gamma
        else:
            hi = gamma
    raise RuntimeError(
        f"bisection did not reach |p_exact(gamma) - p| <= {tol} in 200 iterations "
        f"(p_target={p_target}, geom={geom})"
    )


@dataclass
class MaskStatsReport:
    """Per-unit drop frequencies from Monte Carlo, with region summaries."""

    gamma: float
    geometry: BlockGeometry
    trials: int
    freq_map: np.ndarray  # (m, n) drop frequencies
    analytic_p: float | None
    empirical_p: float
    region_means: dict  # interior / corner / edge; None where region empty

    @property
    def abs_deviation(self) -> float | None:
        if self.analytic_p is None:
            return None
        return abs(self.empirical_p - self.analytic_p)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "geometry": {
                "m": self.geometry.m,
                "n": self.geometry.n,
                "b_size": self.geometry.b_size,
            },
            "trials": self.trials,
            "analytic_p": self.analytic_p,
            "empirical_p": self.empirical_p,
            "abs_deviation": self.abs_deviation,
            "region_means": self.region_means,
            "freq_map": [float(v) for v in self.freq_map.ravel()],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def region_masks(geom: BlockGeometry):
    """Boolean (m, n) masks for the interior, corner, and edge regions."""
    m, n, k = geom.m, geom.n, geom.k
    rows = np.arange(m)[:, None]
    cols = np.arange(n)[None, :]
    row_border = (rows < k) | (rows >= m - k)
    col_border = (cols < k) | (cols >= n - k)
    interior = ~row_border & ~col_border
    corner = np.broadcast_to(row_border & col_border, (m, n))
    edge = ~interior & ~corner
    return interior, corner, edge


def expand_centers(centers: np.ndarray, b_size: int) -> np.ndarray:
    """Expand a stack of center indicator grids (..., m, n) into drop
    patterns: a unit is dropped when any center lies within its b x b
    neighborhood; blocks are clipped at the borders."""
    size = (1,) * (centers.ndim - 2) + (b_size, b_size)
    return maximum_filter(centers, size=size, mode="constant", cval=0)


def mc_drop_rate(
    gamma: float,
    geom: BlockGeometry,
    trials: int,
    rng: RngStream,
    center_region: str = "full",
) -> MaskStatsReport:
    """Sample independent single-channel drop patterns and tally per-unit
    drop frequencies; this is the oracle the closed forms are tested against."""
    _check_unit(gamma, "gamma")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if center_region not in ("full", "valid"):
        raise ValueError(f"center_region must be 'full' or 'valid', got {center_region}")

    m, n, k = geom.m, geom.n, geom.k
    counts = np.zeros((m, n), dtype=np.int64)
    chunk = max(1, 10_000_000 // (m * n))
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        centers = (rng.random((t, m, n)) < gamma).astype(np.uint8)
        if center_region == "valid":
            allowed = np.zeros((m, n), dtype=np.uint8)
            allowed[k : m - k, k : n - k] = 1
            centers *= allowed
        dropped = expand_centers(centers, geom.b_size)
        counts += dropped.sum(axis=0, dtype=np.int64)
        done += t

    freq = counts / trials
    analytic = p_exact(gamma, geom) if geom.supports_exact() and center_region == "full" else None
    interior, corner, edge = region_masks(geom)
    means = {}
    for name, mask in (("interior", interior), ("corner", corner), ("edge", edge)):
        means[name] = float(freq[mask].mean()) if mask.any() else None
    return MaskStatsReport(
        gamma=gamma,
        geometry=geom,
        trials=trials,
        freq_map=freq,
        analytic_p=analytic,
        empirical_p=float(freq.mean()),
        region_means=means,
    )
