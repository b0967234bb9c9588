#!/usr/bin/env python3
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np
from scipy import stats

from mixedboot.lib.engines import BootstrapRun
from mixedboot.lib.errors import InferenceError

MIN_SAMPLES: int = 20
MAX_FAILURE_RATE: float = 0.10


@dataclass(frozen=True)
class PercentileCI:
    target: str
    level: float
    lower: float
    upper: float
    B_effective: int

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class SampleSummary:
    target: str
    estimate: float
    mean: float
    sd: float
    bias: float
    skewness: float


@dataclass(frozen=True)
class CoverageReport:
    method: str
    coverage: Dict[str, float]
    R: int
    failures: int = 0
    targets: List[str] = field(default_factory=list)


def _clean(samples: Sequence[float]) -> np.ndarray:
    values = np.asarray(samples, dtype=float).ravel()
    return values[np.isfinite(values)]


def percentile_ci(
    samples: Sequence[float],
    level: float,
    target: str = "",
    min_samples: int = MIN_SAMPLES,
) -> PercentileCI:
    """
    (q(alpha/2), q(1 - alpha/2)) of the finite samples, q interpolated
    linearly at sorted position 1 + (m - 1) p
    """
    if not 0.0 < level < 1.0:
        raise InferenceError(f"level must be in (0, 1), got {level}")
    values = _clean(samples)
    if values.shape[0] < min_samples:
        raise InferenceError(
            f"{target or 'statistic'}: {values.shape[0]} usable samples, need {min_samples}"
        )
    alpha = 1.0 - level
    lower, upper = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
    return PercentileCI(
        target=target,
        level=level,
        lower=float(lower),
        upper=float(upper),
        B_effective=int(values.shape[0]),
    )


def bootstrap_pvalue(samples: Sequence[float], null_value: float = 0.0) -> float:
    """share of samples at or below null_value"""
    values = _clean(samples)
    if values.shape[0] == 0:
        raise InferenceError("bootstrap p-value needs at least one sample")
    return float(np.count_nonzero(values <= null_value)) / values.shape[0]


def summarize_samples(samples: Sequence[float], estimate: float, target: str = "") -> SampleSummary:
    values = _clean(samples)
    if values.shape[0] == 0:
        raise InferenceError(f"{target or 'statistic'}: no usable samples")
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if values.shape[0] > 1 else 0.0
    skewness = float(stats.skew(values)) if sd > 0.0 else 0.0
    return SampleSummary(
        target=target,
        estimate=float(estimate),
        mean=mean,
        sd=sd,
        bias=mean - float(estimate),
        skewness=skewness,
    )


def run_intervals(
    run: BootstrapRun,
    level: float,
    max_failure_rate: float = MAX_FAILURE_RATE,
    min_samples: int = MIN_SAMPLES,
) -> Dict[str, PercentileCI]:
    """percentile CIs for every parameter and statistic of a run"""
    if run.failure_rate > max_failure_rate:
        raise InferenceError(
            f"{run.method.label}: {run.failures} of {run.B} replicates failed, "
            f"above the {max_failure_rate:.0%} limit for intervals"
        )
    return {
        target: percentile_ci(run.samples(target), level, target, min_samples)
        for target in run.targets
    }


def coverage(
    truth: Mapping[str, float],
    intervals: Sequence[Mapping[str, PercentileCI]],
    method: str = "",
    failures: int = 0,
) -> CoverageReport:
    """
    Per-target share of simulations whose interval contains the truth.
    intervals holds one {target: CI} mapping per simulation.
    """
    targets = [target for target in truth if all(target in sim for sim in intervals)]
    R = len(intervals)
    rates: Dict[str, float] = {}
    for target in targets:
        hits = sum(1 for sim in intervals if sim[target].contains(truth[target]))
        rates[target] = hits / R if R else float("nan")
    return CoverageReport(method=method, coverage=rates, R=R, failures=failures, targets=targets)
