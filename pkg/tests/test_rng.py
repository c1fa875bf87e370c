import numpy as np
import pytest

from choice_lab import rng


class TestStreams:
    def test_same_key_same_draws(self):
        a = rng.standard_normal(1000, 2, 7, "eta")
        b = rng.standard_normal(1000, 2, 7, "eta")
        np.testing.assert_array_equal(a, b)

    def test_labels_and_seeds_separate_streams(self):
        a = rng.uniform(100, 1, 7, "eta")
        assert not np.array_equal(a, rng.uniform(100, 1, 7, "v"))
        assert not np.array_equal(a, rng.uniform(100, 1, 8, "eta"))

    def test_prefix_stable_under_longer_requests(self):
        short = rng.standard_normal(1000, 1, 3, "x")
        long = rng.standard_normal(3 * rng.BLOCK_SIZE + 5, 1, 3, "x")
        np.testing.assert_array_equal(short, long[:1000])

    def test_block_sizes(self):
        assert rng.block_sizes(5, 2) == [2, 2, 1]
        assert sum(rng.block_sizes(rng.BLOCK_SIZE * 2)) == rng.BLOCK_SIZE * 2
        with pytest.raises(ValueError):
            rng.block_sizes(0)

    def test_key_is_128_bit(self):
        key = rng.stream_key(1, "a", 0)
        assert key.dtype == np.uint64 and key.shape == (2,)
