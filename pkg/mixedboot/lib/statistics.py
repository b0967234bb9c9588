#!/usr/bin/env python3
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from mixedboot.lib.errors import ConfigurationError
from mixedboot.lib.lmm_core import ClusteredDataset, ThetaVector

LAMBDA: str = "lambda"


@dataclass(frozen=True)
class StatisticPlugin:
    """
    Derived statistic evaluated on every replicate as
    evaluate(theta_star, y_star, data). Plugins with requires_responses=False
    must ignore y_star, they get re-evaluated after postscaling with y_star=None.
    """

    name: str
    evaluate: Callable[[ThetaVector, Optional[np.ndarray], ClusteredDataset], float]
    requires_responses: bool = False


def _signal_to_noise(theta: ThetaVector, _y, _data) -> float:
    return theta.sigma2_u / theta.sigma2_e


def signal_to_noise() -> StatisticPlugin:
    return StatisticPlugin(name=LAMBDA, evaluate=_signal_to_noise)


class _LinearCombination:
    def __init__(self, coefficients: np.ndarray):
        self.coefficients = coefficients

    def __call__(self, theta: ThetaVector, _y, _data) -> float:
        if theta.beta.shape[0] != self.coefficients.shape[0]:
            raise ConfigurationError(
                f"linear combination has {self.coefficients.shape[0]} coefficients, "
                f"model has {theta.beta.shape[0]} fixed effects"
            )
        return float(self.coefficients @ theta.beta)


def linear_combination(name: str, coefficients: Sequence[float]) -> StatisticPlugin:
    """c' beta"""
    return StatisticPlugin(
        name=name, evaluate=_LinearCombination(np.asarray(coefficients, dtype=float))
    )


class _TreatmentEffect:
    def __init__(self, columns: np.ndarray):
        self.columns = columns

    def __call__(self, theta: ThetaVector, _y, data: ClusteredDataset) -> float:
        if np.any(self.columns >= data.p) or np.any(self.columns < 1):
            raise ConfigurationError(
                f"treatment columns {self.columns.tolist()} outside 1..{data.p - 1}"
            )
        treated_part = data.X[:, self.columns]
        treated = np.any(treated_part != 0.0, axis=1)
        if not np.any(treated):
            return float("nan")
        return float(np.mean(treated_part[treated] @ theta.beta[self.columns]))


def treatment_effect(name: str, columns: Sequence[int]) -> StatisticPlugin:
    """
    model-based average effect over treated units: mean of x_S' beta_S over
    rows where any covariate in S is nonzero
    """
    return StatisticPlugin(
        name=name, evaluate=_TreatmentEffect(np.asarray(columns, dtype=np.int64))
    )
