#!/usr/bin/env python3
import os
import sys

import numpy as np
import pytest

try:
    import mixedboot
except ImportError:
    sys.path.append(
        os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__))))
    )

from mixedboot.lib.errors import DomainError
from mixedboot.lib.resample import (
    DrawSpec,
    RandomSource,
    draw_chisq1_standardized,
    draw_exp1,
    draw_normal,
    ppswr,
    srswr,
)


def test_random_source_is_a_value():
    first = RandomSource(seed=2021, stream_id=3).generator().random(5)
    second = RandomSource(seed=2021, stream_id=3).generator().random(5)
    np.testing.assert_array_equal(first, second)
    assert RandomSource(1, 2) == RandomSource(1, 2)
    assert RandomSource(1).child(4).spawn_key == (0, 4)


def test_child_streams_are_distinct():
    source = RandomSource(seed=8)
    draws = [source.child(b).generator().random(4) for b in range(6)]
    for i in range(len(draws)):
        for j in range(i + 1, len(draws)):
            assert not np.array_equal(draws[i], draws[j])
    assert not np.array_equal(source.generator().random(4), draws[0])


def test_negative_seed_is_rejected():
    with pytest.raises(DomainError):
        RandomSource(seed=-1)


def test_equal_sizes_reproduce_uniform_draws():
    values = np.arange(10.0) * 1.5
    uniform = srswr(values, 50, RandomSource(3))
    weighted = ppswr(values, np.full(10, 7.0), 50, RandomSource(3))
    np.testing.assert_array_equal(uniform, weighted)


def test_zero_weight_elements_are_never_drawn():
    values = np.array([10, 20, 30, 40])
    drawn = ppswr(values, [0.0, 2.0, 0.0, 1.0], 2000, RandomSource(5))
    assert set(np.unique(drawn)) <= {20, 40}


def test_pps_frequencies_match_sizes():
    sizes = np.array([1.0, 2.0, 3.0, 4.0])
    count = 20000
    drawn = ppswr(np.arange(4), sizes, count, RandomSource(12))
    p = sizes / sizes.sum()
    freq = np.bincount(drawn, minlength=4) / count
    se = np.sqrt(p * (1.0 - p) / count)
    assert np.all(np.abs(freq - p) <= 4.0 * se)


def test_empty_or_invalid_pools_raise():
    with pytest.raises(DomainError):
        srswr([], 3, RandomSource(1))
    with pytest.raises(DomainError):
        ppswr([1, 2], [0.0, 0.0], 3, RandomSource(1))
    with pytest.raises(DomainError):
        ppswr([1, 2], [1.0, -1.0], 3, RandomSource(1))
    with pytest.raises(DomainError):
        ppswr([1, 2, 3], [1.0, 1.0], 3, RandomSource(1))


def test_draw_spec_dispatch():
    values = np.arange(5)
    np.testing.assert_array_equal(
        DrawSpec(values, 8).draw(RandomSource(2)), srswr(values, 8, RandomSource(2))
    )
    sizes = np.array([1.0, 0.0, 3.0, 1.0, 2.0])
    np.testing.assert_array_equal(
        DrawSpec(values, 8, sizes).draw(RandomSource(2)), ppswr(values, sizes, 8, RandomSource(2))
    )
    with pytest.raises(DomainError):
        DrawSpec(values, -1)


def test_standardized_chisq_moments():
    count = 200000
    x = draw_chisq1_standardized(count, RandomSource(31))
    # var of the sample variance for kurtosis 15 is 14 / n
    assert abs(x.mean()) <= 4.0 / np.sqrt(count)
    assert abs(x.var() - 1.0) <= 4.0 * np.sqrt(14.0 / count)
    assert np.all(x >= -1.0 / np.sqrt(2.0))


def test_normal_and_exponential_draws():
    z = draw_normal(1.0, 0.0, 4, RandomSource(1))
    np.testing.assert_array_equal(z, np.ones(4))
    with pytest.raises(DomainError):
        draw_normal(0.0, -1.0, 4, RandomSource(1))
    w = draw_exp1(50000, RandomSource(9))
    assert np.all(w >= 0.0)
    assert w.mean() == pytest.approx(1.0, abs=4.0 / np.sqrt(50000))


def test_generator_is_accepted_directly():
    rng = np.random.default_rng(4)
    assert srswr([1, 2, 3], 6, rng).shape == (6,)


if __name__ == "__main__":
    test_equal_sizes_reproduce_uniform_draws()
    test_pps_frequencies_match_sizes()
