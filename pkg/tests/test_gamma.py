import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rblock.gamma import (
    BlockGeometry,
    gamma_corrected,
    gamma_simple,
    mc_drop_rate,
    p_exact,
    p_no_margin,
    p_valid_region,
    region_masks,
    solve_gamma_exact,
)
from rblock.rng import RngStream


def per_unit_oracle(gamma: float, geom: BlockGeometry) -> float:
    """Independent check of the closed form: for every unit, count the
    center positions whose clipped block covers it, then average the
    per-unit drop probabilities 1 - (1-gamma)^count."""
    m, n, k = geom.m, geom.n, geom.k
    total = 0.0
    for i in range(m):
        rows = min(i + k, m - 1) - max(i - k, 0) + 1
        for j in range(n):
            cols = min(j + k, n - 1) - max(j - k, 0) + 1
            total += 1 - (1 - gamma) ** (rows * cols)
    return total / (m * n)


class TestGammaEstimates:
    def test_simple_value(self):
        assert gamma_simple(0.2, 3) == pytest.approx(0.2 / 9, abs=1e-15)

    def test_simple_degenerates(self):
        assert gamma_simple(0.0, 5) == 0.0
        assert gamma_simple(0.37, 1) == 0.37

    def test_corrected_value(self):
        geom = BlockGeometry(32, 32, 3)
        expected = 0.2 * 1024 / (9 * 900)  # = 0.025283950617283953
        assert gamma_corrected(0.2, geom) == pytest.approx(expected, abs=1e-15)

    def test_corrected_degenerates(self):
        assert gamma_corrected(0.0, BlockGeometry(16, 16, 3)) == 0.0
        assert gamma_corrected(0.3, BlockGeometry(16, 16, 1)) == pytest.approx(0.3)

    def test_block_larger_than_grid_rejected(self):
        with pytest.raises(ValueError):
            BlockGeometry(4, 4, 5)

    def test_even_block_rejected(self):
        with pytest.raises(ValueError):
            BlockGeometry(16, 16, 4)


class TestPExact:
    def test_boundary_identities(self):
        geom = BlockGeometry(12, 12, 3)
        assert abs(p_exact(0.0, geom)) <= 1e-12
        assert abs(p_exact(1.0, geom) - 1.0) <= 1e-12

    def test_degenerate_block_is_identity(self):
        geom = BlockGeometry(12, 10, 1)
        for g in (0.0, 0.1, 0.5, 0.99, 1.0):
            assert p_exact(g, geom) == pytest.approx(g, abs=1e-15)

    def test_matches_per_unit_oracle(self):
        for m, n, b in ((12, 12, 3), (16, 20, 3), (13, 17, 5)):
            geom = BlockGeometry(m, n, b)
            for g in (0.01, 0.05, 0.2, 0.7):
                assert p_exact(g, geom) == pytest.approx(
                    per_unit_oracle(g, geom), abs=1e-12)

    def test_geometry_precondition(self):
        with pytest.raises(ValueError, match="mc_drop_rate"):
            p_exact(0.1, BlockGeometry(6, 6, 3))

    def test_monotone_on_grid(self):
        geom = BlockGeometry(32, 32, 3)
        gammas = np.linspace(0.0, 1.0, 100)
        values = [p_exact(float(g), geom) for g in gammas]
        diffs = np.diff(values)
        assert (diffs > 0).all()

    def test_bounds_ordering_on_grid(self):
        geom = BlockGeometry(32, 32, 3)
        for g in np.linspace(0.0, 1.0, 100):
            g = float(g)
            p2 = p_valid_region(g, geom)
            p = p_exact(g, geom)
            p1 = p_no_margin(g, 3)
            assert p2 <= p + 1e-15 and p <= p1 + 1e-15

    def test_region_decomposition(self):
        # Region-weighted analytic expectations reassemble p_exact exactly.
        geom = BlockGeometry(14, 18, 5)
        m, n, k, b = geom.m, geom.n, geom.k, geom.b_size
        for g in (0.02, 0.1, 0.4):
            q = 1 - g
            interior = (m - 2 * k) * (n - 2 * k) * (1 - q ** (b * b))
            corner = 4 * sum(
                1 - q ** ((k + i) * (k + j))
                for i in range(1, k + 1) for j in range(1, k + 1))
            edge = 2 * (m + n - 4 * k) * sum(
                1 - q ** (b * (k + j)) for j in range(1, k + 1))
            assert p_exact(g, geom) == pytest.approx(
                (interior + corner + edge) / (m * n), abs=1e-12)


class TestBounds:
    def test_p_no_margin_values(self):
        # frozen from a 50-digit mpmath evaluation of 1 - (1-g)^9
        assert p_no_margin(0.0222222, 3) == pytest.approx(
            0.18311381161080926, abs=1e-15)
        assert p_no_margin(0.0, 3) == 0.0
        assert p_no_margin(0.4, 1) == pytest.approx(0.4, abs=1e-15)

    def test_valid_region_approaches_no_margin(self):
        geom = BlockGeometry(10_000, 10_000, 3)
        g = 0.01
        p1 = p_no_margin(g, 3)
        p2 = p_valid_region(g, geom)
        assert abs(p2 - p1) / p1 <= 1e-3

    def test_small_gamma_linearization(self):
        for g in (1e-4, 1e-5, 1e-6):
            approx = 9 * g
            assert abs(p_no_margin(g, 3) - approx) / approx <= 1e-2

    @given(st.floats(0.0, 1.0), st.sampled_from([3, 5]))
    @settings(max_examples=100, deadline=None)
    def test_ordering_property(self, gamma, b):
        geom = BlockGeometry(8 * b, 8 * b, b)
        assert p_valid_region(gamma, geom) <= p_exact(gamma, geom) + 1e-12
        assert p_exact(gamma, geom) <= p_no_margin(gamma, b) + 1e-12


class TestSolver:
    def test_trivial_endpoints(self):
        geom = BlockGeometry(32, 32, 3)
        assert solve_gamma_exact(0.0, geom) == 0.0
        assert solve_gamma_exact(1.0, geom) == 1.0

    def test_round_trip(self):
        geom = BlockGeometry(32, 32, 3)
        for p in (0.1, 0.2, 0.5, 0.9):
            g = solve_gamma_exact(p, geom, tol=1e-12)
            assert abs(p_exact(g, geom) - p) <= 1e-10

    def test_golden_half(self):
        # recorded after the Monte Carlo cross-check in TestMonteCarlo
        geom = BlockGeometry(32, 32, 3)
        g = solve_gamma_exact(0.5, geom, tol=1e-12)
        assert g == pytest.approx(0.0775644376690, abs=1e-10)

    def test_degenerate_block(self):
        geom = BlockGeometry(32, 32, 1)
        for p in (0.25, 0.5):
            assert solve_gamma_exact(p, geom, tol=1e-13) == pytest.approx(p, abs=1e-12)

    def test_rejects_bad_tol(self):
        with pytest.raises(ValueError):
            solve_gamma_exact(0.5, BlockGeometry(32, 32, 3), tol=0.0)


class TestMonteCarlo:
    def test_degenerate_gammas(self):
        geom = BlockGeometry(12, 12, 3)
        r0 = mc_drop_rate(0.0, geom, 100, RngStream(0))
        assert (r0.freq_map == 0).all()
        r1 = mc_drop_rate(1.0, geom, 100, RngStream(0))
        assert (r1.freq_map == 1).all()

    def test_matches_exact_within_three_sigma(self):
        geom = BlockGeometry(12, 12, 3)
        gamma, trials = 0.05, 100_000
        report = mc_drop_rate(gamma, geom, trials, RngStream(7))
        p = p_exact(gamma, geom)
        sigma = math.sqrt(p * (1 - p) / (geom.m * geom.n * trials))
        assert report.abs_deviation <= 3 * sigma

        # interior mean vs 1-(1-g)^{b^2}; corner unit (0,0) vs 1-(1-g)^{(k+1)^2}
        p_int = 1 - (1 - gamma) ** 9
        sig_int = math.sqrt(p_int * (1 - p_int) / ((geom.m - 2) ** 2 * trials))
        assert abs(report.region_means["interior"] - p_int) <= 3 * sig_int
        p_corner = 1 - (1 - gamma) ** 4
        sig_c = math.sqrt(p_corner * (1 - p_corner) / trials)
        assert abs(report.freq_map[0, 0] - p_corner) <= 3 * sig_c

    def test_valid_center_region_matches_per_unit_oracle(self):
        # Exact oracle: a unit is dropped with prob 1-(1-g)^c where c counts
        # the fully-fitting center positions whose block covers it.
        geom = BlockGeometry(12, 12, 3)
        m, n, k = geom.m, geom.n, geom.k
        gamma, trials = 0.05, 100_000
        report = mc_drop_rate(gamma, geom, trials, RngStream(11), center_region="valid")
        total = 0.0
        for i in range(m):
            rows = min(i + k, m - 1 - k) - max(i - k, k) + 1
            for j in range(n):
                cols = min(j + k, n - 1 - k) - max(j - k, k) + 1
                total += 1 - (1 - gamma) ** (max(rows, 0) * max(cols, 0))
        expected = total / (m * n)
        # units under one block are correlated, inflating the grid-mean
        # variance by up to b_size^2 relative to independent draws
        sigma = math.sqrt(expected * (1 - expected) / (m * n * trials))
        assert abs(report.empirical_p - expected) <= 3 * geom.b_size * sigma
        # Eq-ordering sanity: the closed-form lower bound stays below both.
        assert p_valid_region(gamma, geom) <= p_exact(gamma, geom)

    def test_report_serializes(self):
        geom = BlockGeometry(12, 12, 3)
        report = mc_drop_rate(0.05, geom, 1000, RngStream(1))
        doc = report.to_dict()
        assert doc["geometry"] == {"m": 12, "n": 12, "b_size": 3}
        assert len(doc["freq_map"]) == 144
        assert set(doc["region_means"]) == {"interior", "corner", "edge"}
        assert doc["abs_deviation"] == pytest.approx(
            abs(doc["empirical_p"] - doc["analytic_p"]))

    def test_region_masks_partition(self):
        geom = BlockGeometry(12, 14, 5)
        interior, corner, edge = region_masks(geom)
        total = interior.astype(int) + corner.astype(int) + edge.astype(int)
        assert (total == 1).all()
        assert interior.sum() == (12 - 4) * (14 - 4)
        assert corner.sum() == 4 * 2 * 2
