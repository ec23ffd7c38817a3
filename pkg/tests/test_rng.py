import numpy as np
import pytest

from rblock.rng import RngStream, bernoulli_sample


class TestRngStream:
    def test_same_seed_replays_identically(self):
        a = RngStream(123, 7).random(1000)
        b = RngStream(123, 7).random(1000)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(123, 0).random(1000)
        b = RngStream(123, 1).random(1000)
        assert np.abs(a - b).max() > 0

    def test_substreams_are_reproducible_and_distinct(self):
        root = RngStream(5)
        kids = [root.substream(i) for i in range(4)]
        again = [RngStream(5).substream(i) for i in range(4)]
        for k, a in zip(kids, again):
            np.testing.assert_array_equal(k.random(100), a.random(100))
        draws = [RngStream(5).substream(i).random(100) for i in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.abs(draws[i] - draws[j]).max() > 0

    def test_substream_correlation_is_negligible(self):
        root = RngStream(99)
        a = root.substream(0).random(20000) - 0.5
        b = root.substream(1).random(20000) - 0.5
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 0.03


class TestBernoulliSample:
    def test_degenerate_zero(self):
        out = bernoulli_sample(RngStream(0), (10, 10), 0.0)
        assert (out == 0).all()

    def test_degenerate_one(self):
        out = bernoulli_sample(RngStream(0), (10, 10), 1.0)
        assert (out == 1).all()

    def test_mean_within_three_sigma(self):
        n = 100_000
        out = bernoulli_sample(RngStream(42), (n,), 0.3)
        assert set(np.unique(out)) <= {0.0, 1.0}
        # 3 sigma of a Bernoulli(0.3) mean over 1e5 draws is ~0.0043
        assert abs(out.mean() - 0.3) < 0.005

    def test_rejects_bad_probability(self):
        with pytest.raises(ValueError):
            bernoulli_sample(RngStream(0), (3,), 1.5)
        with pytest.raises(ValueError):
            bernoulli_sample(RngStream(0), (3,), -0.1)
