#!/usr/bin/env python3
"""
Sampling primitives. Categorical draws go through one inverse-CDF pathway
(binary search over normalized cumulative weights), so PPS sampling with
equal sizes reproduces SRS sampling draw for draw.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from mixedboot.lib.errors import DomainError


@dataclass(frozen=True)
class RandomSource:
    """
    Value-like handle on a PCG64 stream keyed by (seed, parent_key..., stream_id).
    Every call to generator() starts the stream from its beginning.
    """

    seed: int
    stream_id: int = 0
    parent_key: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise DomainError("seed and stream_id must be non-negative")

    @property
    def spawn_key(self) -> Tuple[int, ...]:
        return tuple(self.parent_key) + (int(self.stream_id),)

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.spawn_key)
        return np.random.Generator(np.random.PCG64(sequence))

    def child(self, stream_id: int) -> "RandomSource":
        return RandomSource(seed=self.seed, stream_id=stream_id, parent_key=self.spawn_key)


RandomLike = Union[RandomSource, np.random.Generator]


def as_generator(rng: RandomLike) -> np.random.Generator:
    if isinstance(rng, RandomSource):
        return rng.generator()
    return rng


@dataclass(frozen=True, eq=False)
class DrawSpec:
    """SRSWR(values, count) when weights is None, otherwise PPSWR(values, weights, count)"""

    values: np.ndarray
    count: int
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.count < 0:
            raise DomainError("count must be non-negative")
        if self.weights is not None and len(self.weights) != len(self.values):
            raise DomainError("weights and values differ in length")

    def draw(self, rng: RandomLike) -> np.ndarray:
        if self.weights is None:
            return srswr(self.values, self.count, rng)
        return ppswr(self.values, self.weights, self.count, rng)


def _categorical(weights: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    cumulative = np.cumsum(weights)
    total = cumulative[-1]
    cumulative = cumulative / total
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, rng.random(count), side="right")


def _values(values) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim != 1 or values.shape[0] == 0:
        raise DomainError("cannot sample from an empty pool")
    return values


def srswr(values: Sequence, count: int, rng: RandomLike) -> np.ndarray:
    """count uniform draws with replacement"""
    values = _values(values)
    return values[_categorical(np.ones(values.shape[0]), int(count), as_generator(rng))]


def ppswr(values: Sequence, sizes: Sequence[float], count: int, rng: RandomLike) -> np.ndarray:
    """count draws with replacement, element i chosen with probability sizes_i / sum(sizes)"""
    values = _values(values)
    sizes = np.asarray(sizes, dtype=float)
    if sizes.shape != values.shape:
        raise DomainError("sizes and values differ in length")
    if np.any(sizes < 0.0) or not np.all(np.isfinite(sizes)):
        raise DomainError("sizes must be non-negative and finite")
    if not np.sum(sizes) > 0.0:
        raise DomainError("sizes sum to zero")
    return values[_categorical(sizes, int(count), as_generator(rng))]


def draw_normal(mean: float, sd: float, count: int, rng: RandomLike) -> np.ndarray:
    if sd < 0.0:
        raise DomainError(f"sd must be >= 0, got {sd}")
    return mean + sd * as_generator(rng).standard_normal(int(count))


def draw_chisq1_standardized(count: int, rng: RandomLike) -> np.ndarray:
    """(chi2_1 - 1) / sqrt(2): mean 0, variance 1, right-skewed"""
    return (as_generator(rng).chisquare(1.0, int(count)) - 1.0) / np.sqrt(2.0)


def draw_exp1(count: int, rng: RandomLike) -> np.ndarray:
    return as_generator(rng).standard_exponential(int(count))
