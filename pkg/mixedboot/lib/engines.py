#!/usr/bin/env python3
import dataclasses
from dataclasses import dataclass
from enum import Enum
from functools import partial
from concurrent.futures import Executor
from typing import List, Optional, Sequence, Union

import numpy as np

from mixedboot.lib import reflate
from mixedboot.lib.errors import BootstrapError, MixedBootError, PostscalingError
from mixedboot.lib.lmm_core import (
    ClusteredDataset,
    Criterion,
    FitOptions,
    FitResult,
    ThetaVector,
    fit as fit_model,
    parameter_names,
)
from mixedboot.lib.logging_trait import LoggingTrait
from mixedboot.lib.parallel import gather_in_executor, map_ordered
from mixedboot.lib.resample import (
    RandomSource,
    draw_exp1,
    draw_normal,
    ppswr,
    srswr,
)
from mixedboot.lib.statistics import LAMBDA, StatisticPlugin, signal_to_noise

# above this share of failed refits a run is reported with a warning
FAILURE_WARNING_RATE: float = 0.02


class BootstrapMethod(str, Enum):
    PREB0 = "preb0"
    PREB1 = "preb1"
    PREB2 = "preb2"
    MREB1 = "mreb1"
    REB0 = "reb0"
    REB1 = "reb1"
    REB2 = "reb2"
    REBNC0 = "rebnc0"
    REBNC1 = "rebnc1"
    PARAMETRIC = "parametric"
    CLUSTER = "cluster"
    GENCLUSTER = "gencluster"
    CGR = "cgr"

    @classmethod
    def parse(cls, value) -> "BootstrapMethod":
        if isinstance(value, BootstrapMethod):
            return value
        key = "".join(ch for ch in str(value).lower() if ch.isalnum())
        key = {"generalizedcluster": "gencluster", "generalisedcluster": "gencluster"}.get(
            key, key
        )
        try:
            return cls(key)
        except ValueError:
            raise BootstrapError(
                "Unknown bootstrap method %s, valid options are %s"
                % (value, [m.value for m in cls])
            )

    @property
    def label(self) -> str:
        return METHOD_LABELS[self]


METHOD_LABELS = {
    BootstrapMethod.PREB0: "PREB-0",
    BootstrapMethod.PREB1: "PREB-1",
    BootstrapMethod.PREB2: "PREB-2",
    BootstrapMethod.MREB1: "MREB-1",
    BootstrapMethod.REB0: "REB-0",
    BootstrapMethod.REB1: "REB-1",
    BootstrapMethod.REB2: "REB-2",
    BootstrapMethod.REBNC0: "REBnc-0",
    BootstrapMethod.REBNC1: "REBnc-1",
    BootstrapMethod.PARAMETRIC: "Parametric",
    BootstrapMethod.CLUSTER: "Cluster",
    BootstrapMethod.GENCLUSTER: "Generalized cluster",
    BootstrapMethod.CGR: "CGR",
}

REB_FAMILY = (
    BootstrapMethod.REB0,
    BootstrapMethod.REB1,
    BootstrapMethod.REB2,
    BootstrapMethod.REBNC0,
    BootstrapMethod.REBNC1,
    BootstrapMethod.PREB0,
    BootstrapMethod.PREB2,
)


class ReplicateStatus(str, Enum):
    OK = "ok"
    BOUNDARY = "boundary"
    FAILED = "failed"


@dataclass(frozen=True, eq=False)
class ReplicateDesign:
    """bootstrap dataset to refit, with optional cluster weights"""

    data: ClusteredDataset
    weights: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class ReplicateOutcome:
    index: int
    status: ReplicateStatus
    theta: Optional[np.ndarray] = None
    statistics: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class BootstrapRun:
    method: BootstrapMethod
    B: int
    # failed rows are NaN
    theta_star: np.ndarray
    stats_star: np.ndarray
    status: np.ndarray
    seed: int
    parameter_names: List[str]
    statistic_names: List[str]
    criterion: Criterion
    point_estimate: np.ndarray
    point_statistics: np.ndarray

    @property
    def ok_mask(self) -> np.ndarray:
        return self.status != ReplicateStatus.FAILED.value

    @property
    def failures(self) -> int:
        return int(np.sum(~self.ok_mask))

    @property
    def failure_rate(self) -> float:
        return self.failures / self.B if self.B else 0.0

    @property
    def B_effective(self) -> int:
        return self.B - self.failures

    @property
    def targets(self) -> List[str]:
        return list(self.parameter_names) + list(self.statistic_names)

    def _column(self, target: str):
        if target in self.parameter_names:
            k = self.parameter_names.index(target)
            return self.theta_star[:, k], float(self.point_estimate[k])
        if target in self.statistic_names:
            k = self.statistic_names.index(target)
            return self.stats_star[:, k], float(self.point_statistics[k])
        raise KeyError(f"unknown target {target}, run has {self.targets}")

    def samples(self, target: str) -> np.ndarray:
        """replicate values of target over non-failed rows"""
        values, _ = self._column(target)
        values = values[self.ok_mask]
        return values[np.isfinite(values)]

    def estimate(self, target: str) -> float:
        return self._column(target)[1]


def evaluate_statistics(
    statistics: Sequence[StatisticPlugin],
    theta: ThetaVector,
    y_star: Optional[np.ndarray],
    data: ClusteredDataset,
) -> np.ndarray:
    return np.array([plugin.evaluate(theta, y_star, data) for plugin in statistics], dtype=float)


class BootstrapEngine(LoggingTrait):
    """
    Replicate b draws all of its randomness from source.child(b), so a run is
    a pure function of (data, fit, B, seed) whatever the worker count.
    """

    def __init__(
        self,
        method: BootstrapMethod,
        data: ClusteredDataset,
        fit: FitResult,
        statistics: Sequence[StatisticPlugin] = (),
        criterion: Optional[Criterion] = None,
        options: Optional[FitOptions] = None,
    ):
        self.method = method
        self.data = data
        self.fit = fit
        self.criterion = Criterion.parse(criterion) if criterion else fit.criterion
        self.options = options or FitOptions()
        self.statistics: List[StatisticPlugin] = [signal_to_noise()] + [
            plugin for plugin in statistics if plugin.name != LAMBDA
        ]
        self.fitted: np.ndarray = data.X @ fit.theta_hat.beta

    def draw_replicate(self, rng: np.random.Generator) -> ReplicateDesign:
        raise NotImplementedError()

    def evaluate_design(self, design: ReplicateDesign, index: int = 0) -> ReplicateOutcome:
        try:
            refit = fit_model(
                design.data, self.criterion, self.options, weights=design.weights
            )
            values = evaluate_statistics(
                self.statistics, refit.theta_hat, design.data.y, design.data
            )
        except (MixedBootError, FloatingPointError, np.linalg.LinAlgError) as e:
            self.log_debug(f"{self.method.label} replicate {index} failed: {e}")
            return ReplicateOutcome(index=index, status=ReplicateStatus.FAILED)
        return ReplicateOutcome(
            index=index,
            status=ReplicateStatus.BOUNDARY if refit.boundary else ReplicateStatus.OK,
            theta=refit.theta_hat.as_array(),
            statistics=values,
        )

    def replicate(self, index: int, source: RandomSource) -> ReplicateOutcome:
        design = self.draw_replicate(source.child(index).generator())
        return self.evaluate_design(design, index)

    def run(
        self, B: int, source: Union[int, RandomSource], threads: int = 1
    ) -> BootstrapRun:
        source = _as_source(source)
        outcomes = map_ordered(
            partial(self.replicate, source=source), list(range(B)), workers=threads
        )
        return self.finalize(self.collect(B, source, outcomes))

    async def run_async(
        self, B: int, source: Union[int, RandomSource], executor: Executor
    ) -> BootstrapRun:
        source = _as_source(source)
        outcomes = await gather_in_executor(
            executor, partial(self.replicate, source=source), list(range(B))
        )
        return self.finalize(self.collect(B, source, outcomes))

    def collect(
        self, B: int, source: RandomSource, outcomes: Sequence[ReplicateOutcome]
    ) -> BootstrapRun:
        p = self.data.p
        theta_star = np.full((B, p + 2), np.nan)
        stats_star = np.full((B, len(self.statistics)), np.nan)
        status = np.empty(B, dtype=object)
        for outcome in sorted(outcomes, key=lambda o: o.index):
            status[outcome.index] = outcome.status.value
            if outcome.status != ReplicateStatus.FAILED:
                theta_star[outcome.index] = outcome.theta
                stats_star[outcome.index] = outcome.statistics
        failures = int(np.sum(status == ReplicateStatus.FAILED.value))
        if B > 0 and failures == B:
            raise BootstrapError(f"{self.method.label}: all {B} replicate refits failed")

        message = f"{self.method.label}: {B} replicates, {failures} failed"
        if B and failures / B > FAILURE_WARNING_RATE:
            self.log_warning(message)
        else:
            self.log_info(message)

        return BootstrapRun(
            method=self.method,
            B=B,
            theta_star=theta_star,
            stats_star=stats_star,
            status=status.astype(str),
            seed=source.seed,
            parameter_names=parameter_names(p),
            statistic_names=[plugin.name for plugin in self.statistics],
            criterion=self.criterion,
            point_estimate=self.fit.theta_hat.as_array(),
            point_statistics=evaluate_statistics(
                self.statistics, self.fit.theta_hat, self.data.y, self.data
            ),
        )

    def finalize(self, run: BootstrapRun) -> BootstrapRun:
        return run


def _as_source(source: Union[int, RandomSource]) -> RandomSource:
    if isinstance(source, RandomSource):
        return source
    return RandomSource(seed=int(source))


class ResidualBlockEngine(BootstrapEngine):
    """
    u*_i drawn from the cluster pool, a donor cluster d_i per target cluster,
    then n_i residuals drawn from the donor's pool; without donor resampling
    each cluster draws from its own residuals
    """

    def __init__(
        self,
        method: BootstrapMethod,
        data: ClusteredDataset,
        fit: FitResult,
        pools: reflate.ResamplingPools,
        resample_donors: bool = True,
        **kwargs,
    ):
        super().__init__(method, data, fit, **kwargs)
        self.pools = pools
        self.resample_donors = resample_donors
        self._blocks: List[np.ndarray] = pools.e_pools
        self._donor_ids: np.ndarray = np.arange(data.D)

    def draw_replicate(self, rng: np.random.Generator) -> ReplicateDesign:
        sizes = self.data.cluster_sizes
        u_star = srswr(self.pools.u_pool, self.data.D, rng)
        if self.resample_donors:
            donors = ppswr(self._donor_ids, self.pools.donor_sizes, self.data.D, rng)
        else:
            donors = self._donor_ids
        e_star = np.concatenate(
            [srswr(self._blocks[d], n_i, rng) for d, n_i in zip(donors, sizes)]
        )
        y_star = self.fitted + np.repeat(u_star, sizes) + e_star
        return ReplicateDesign(data=self.data.with_responses(y_star))


class PostscaledEngine(ResidualBlockEngine):
    """-0 engine whose replicate distribution is recentred/rescaled on theta_hat"""

    def finalize(self, run: BootstrapRun) -> BootstrapRun:
        return postscale(run, self.fit.theta_hat, self.statistics, self.data)


def postscale(
    run: BootstrapRun,
    theta_hat: ThetaVector,
    statistics: Sequence[StatisticPlugin],
    data: ClusteredDataset,
) -> BootstrapRun:
    """
    Mean correction for beta columns, ratio correction for the variance
    columns, then response-free statistics are re-evaluated on the result
    """
    ok = run.ok_mask
    theta_star = run.theta_star.copy()
    target = theta_hat.as_array()
    p = target.shape[0] - 2
    means = np.mean(theta_star[ok], axis=0)
    theta_star[ok, :p] += target[:p] - means[:p]
    for k in (p, p + 1):
        if means[k] == 0.0:
            raise PostscalingError(run.parameter_names[k])
        theta_star[ok, k] *= target[k] / means[k]

    stats_star = run.stats_star.copy()
    for j, plugin in enumerate(statistics):
        if plugin.requires_responses:
            continue
        for b in np.flatnonzero(ok):
            stats_star[b, j] = plugin.evaluate(
                ThetaVector.from_array(theta_star[b]), None, data
            )
    return dataclasses.replace(run, theta_star=theta_star, stats_star=stats_star)


class ParametricEngine(BootstrapEngine):
    def draw_replicate(self, rng: np.random.Generator) -> ReplicateDesign:
        theta = self.fit.theta_hat
        u_star = draw_normal(0.0, np.sqrt(theta.sigma2_u), self.data.D, rng)
        e_star = draw_normal(0.0, np.sqrt(theta.sigma2_e), self.data.N, rng)
        y_star = self.fitted + np.repeat(u_star, self.data.cluster_sizes) + e_star
        return ReplicateDesign(data=self.data.with_responses(y_star))


class ClusterEngine(BootstrapEngine):
    def draw_replicate(self, rng: np.random.Generator) -> ReplicateDesign:
        chosen = srswr(np.arange(self.data.D), self.data.D, rng)
        return ReplicateDesign(data=self.data.take_clusters(chosen))


class GeneralizedClusterEngine(BootstrapEngine):
    def draw_replicate(self, rng: np.random.Generator) -> ReplicateDesign:
        return ReplicateDesign(data=self.data, weights=draw_exp1(self.data.D, rng))


class CgrEngine(BootstrapEngine):
    def __init__(self, method, data, fit, **kwargs):
        super().__init__(method, data, fit, **kwargs)
        self.pools = reflate.cgr_pools(fit, data)

    def draw_replicate(self, rng: np.random.Generator) -> ReplicateDesign:
        u_star = srswr(self.pools.u_pool, self.data.D, rng)
        e_star = srswr(self.pools.e_pool, self.data.N, rng)
        y_star = self.fitted + np.repeat(u_star, self.data.cluster_sizes) + e_star
        return ReplicateDesign(data=self.data.with_responses(y_star))


def create_engine(
    method: Union[str, BootstrapMethod],
    data: ClusteredDataset,
    fit: FitResult,
    statistics: Sequence[StatisticPlugin] = (),
    criterion: Optional[Criterion] = None,
    options: Optional[FitOptions] = None,
) -> BootstrapEngine:
    method = BootstrapMethod.parse(method)
    kwargs = dict(statistics=statistics, criterion=criterion, options=options)
    M = BootstrapMethod
    pps, srs = reflate.DonorScheme.PPS, reflate.DonorScheme.SRS

    if method == M.PREB1:
        return ResidualBlockEngine(method, data, fit, reflate.preb1_pools(fit, data), **kwargs)
    if method == M.MREB1:
        return ResidualBlockEngine(method, data, fit, reflate.mreb1_pools(fit, data), **kwargs)
    if method == M.REB1:
        return ResidualBlockEngine(method, data, fit, reflate.reb1_pools(fit, data), **kwargs)
    if method == M.REB0:
        return ResidualBlockEngine(
            method, data, fit, reflate.identity_pools(fit, data, srs), **kwargs
        )
    if method == M.PREB0:
        return ResidualBlockEngine(
            method, data, fit, reflate.identity_pools(fit, data, pps), **kwargs
        )
    if method == M.REB2:
        return PostscaledEngine(
            method, data, fit, reflate.identity_pools(fit, data, srs), **kwargs
        )
    if method == M.PREB2:
        return PostscaledEngine(
            method, data, fit, reflate.identity_pools(fit, data, pps), **kwargs
        )
    if method == M.REBNC0:
        return ResidualBlockEngine(
            method,
            data,
            fit,
            reflate.identity_pools(fit, data, srs),
            resample_donors=False,
            **kwargs,
        )
    if method == M.REBNC1:
        return ResidualBlockEngine(
            method, data, fit, reflate.reb1_pools(fit, data), resample_donors=False, **kwargs
        )
    if method == M.PARAMETRIC:
        return ParametricEngine(method, data, fit, **kwargs)
    if method == M.CLUSTER:
        return ClusterEngine(method, data, fit, **kwargs)
    if method == M.GENCLUSTER:
        return GeneralizedClusterEngine(method, data, fit, **kwargs)
    return CgrEngine(method, data, fit, **kwargs)


def run_bootstrap(
    method: Union[str, BootstrapMethod],
    data: ClusteredDataset,
    fit: FitResult,
    B: int,
    rng: Union[int, RandomSource],
    criterion: Optional[Criterion] = None,
    statistics: Sequence[StatisticPlugin] = (),
    threads: int = 1,
    options: Optional[FitOptions] = None,
) -> BootstrapRun:
    engine = create_engine(method, data, fit, statistics, criterion, options)
    return engine.run(B, rng, threads=threads)


def run_preb1(data, fit, B, rng, criterion=None, **kwargs) -> BootstrapRun:
    return run_bootstrap(BootstrapMethod.PREB1, data, fit, B, rng, criterion, **kwargs)


def run_mreb1(data, fit, B, rng, criterion=None, **kwargs) -> BootstrapRun:
    return run_bootstrap(BootstrapMethod.MREB1, data, fit, B, rng, criterion, **kwargs)


def run_reb_family(variant, data, fit, B, rng, criterion=None, **kwargs) -> BootstrapRun:
    variant = BootstrapMethod.parse(variant)
    if variant not in REB_FAMILY:
        raise BootstrapError(
            "%s is not a REB-family variant, valid options are %s"
            % (variant.value, [m.value for m in REB_FAMILY])
        )
    return run_bootstrap(variant, data, fit, B, rng, criterion, **kwargs)


def run_parametric(data, fit, B, rng, criterion=None, **kwargs) -> BootstrapRun:
    return run_bootstrap(BootstrapMethod.PARAMETRIC, data, fit, B, rng, criterion, **kwargs)


def run_cluster(data, fit, B, rng, criterion=None, **kwargs) -> BootstrapRun:
    return run_bootstrap(BootstrapMethod.CLUSTER, data, fit, B, rng, criterion, **kwargs)


def run_gencluster(data, fit, B, rng, criterion=None, **kwargs) -> BootstrapRun:
    return run_bootstrap(BootstrapMethod.GENCLUSTER, data, fit, B, rng, criterion, **kwargs)


def run_cgr(data, fit, B, rng, criterion=None, **kwargs) -> BootstrapRun:
    return run_bootstrap(BootstrapMethod.CGR, data, fit, B, rng, criterion, **kwargs)
