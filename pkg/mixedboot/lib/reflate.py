#!/usr/bin/env python3
"""
Centering/scaling of cluster-level predictors and unit-level residuals
before they are resampled.

    preb1_pools     centred, scaled u (u^sc), residuals scaled over N (e^s), PPS donors
    mreb1_pools     u^sc, residuals scaled by the SRS-donor weighted moment, SRS donors
    reb1_pools      centred u scaled by the uncentred moment (u^cs), e^s, SRS donors
    identity_pools  raw u_hat / e_hat, PPS (PREB-0) or SRS (REB-0) donors
    cgr_pools       scaled EBLUPs and one global pool of scaled conditional residuals
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from mixedboot.lib.errors import DegeneratePoolError
from mixedboot.lib.lmm_core import ClusteredDataset, FitResult


class PoolScheme(str, Enum):
    PREB1 = "preb1"
    MREB1 = "mreb1"
    REB1 = "reb1"
    IDENTITY_PPS = "identity-pps"
    IDENTITY_SRS = "identity-srs"
    CGR = "cgr"


class DonorScheme(str, Enum):
    PPS = "PPS"
    SRS = "SRS"


@dataclass(frozen=True, eq=False)
class ResamplingPools:
    u_pool: np.ndarray
    # stacked like the dataset: cluster i owns rows offsets[i]:offsets[i]+n_i
    e_pool: np.ndarray
    cluster_sizes: np.ndarray
    # selection is proportional to donor_sizes (n_i for PPS, ones for SRS)
    donor_sizes: np.ndarray
    scheme: PoolScheme
    global_residuals: bool = False

    @property
    def D(self) -> int:
        return int(self.cluster_sizes.shape[0])

    @property
    def donor_weights(self) -> np.ndarray:
        return self.donor_sizes / np.sum(self.donor_sizes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.cluster_sizes)[:-1]))

    @property
    def e_pools(self) -> List[np.ndarray]:
        return np.split(self.e_pool, np.cumsum(self.cluster_sizes)[:-1])

    def e_pool_for(self, cluster: int) -> np.ndarray:
        start = int(self.offsets[cluster])
        return self.e_pool[start : start + int(self.cluster_sizes[cluster])]


@dataclass(frozen=True)
class BootstrapMoments:
    u_mean: float
    u_second: float
    e_mean: float
    e_second: float


def _scaled(values: np.ndarray, sigma: float, mean_square: float, pool: str) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros_like(values)
    if not mean_square > 0.0:
        raise DegeneratePoolError(pool, "all values are zero")
    return values * (sigma / np.sqrt(mean_square))


def _centred_u(fit: FitResult) -> np.ndarray:
    return fit.u_hat - np.mean(fit.u_hat)


def _prescaled_u(fit: FitResult) -> np.ndarray:
    """u^sc: centre, then scale to mean square sigma2_u"""
    centred = _centred_u(fit)
    return _scaled(
        centred, np.sqrt(fit.theta_hat.sigma2_u), float(np.mean(centred ** 2)), "u_pool"
    )


def _residuals_over_units(fit: FitResult) -> np.ndarray:
    """e^s: residuals scaled to unit-average mean square sigma2_e"""
    return _scaled(
        fit.e_hat,
        np.sqrt(fit.theta_hat.sigma2_e),
        float(np.mean(fit.e_hat ** 2)),
        "e_pool",
    )


def _check_shapes(fit: FitResult, data: ClusteredDataset) -> None:
    if not np.array_equal(fit.cluster_sizes, data.cluster_sizes):
        raise ValueError("fit and dataset describe different cluster structures")


def preb1_pools(fit: FitResult, data: ClusteredDataset) -> ResamplingPools:
    _check_shapes(fit, data)
    return ResamplingPools(
        u_pool=_prescaled_u(fit),
        e_pool=_residuals_over_units(fit),
        cluster_sizes=data.cluster_sizes,
        donor_sizes=data.cluster_sizes.astype(float),
        scheme=PoolScheme.PREB1,
    )


def mreb1_pools(fit: FitResult, data: ClusteredDataset) -> ResamplingPools:
    _check_shapes(fit, data)
    n_units = np.repeat(data.cluster_sizes, data.cluster_sizes).astype(float)
    # second moment under SRS donor x SRS within-cluster selection
    weighted = float(np.sum(fit.e_hat ** 2 / n_units)) / data.D
    e_pool = _scaled(fit.e_hat, np.sqrt(fit.theta_hat.sigma2_e), weighted, "e_pool")
    return ResamplingPools(
        u_pool=_prescaled_u(fit),
        e_pool=e_pool,
        cluster_sizes=data.cluster_sizes,
        donor_sizes=np.ones(data.D),
        scheme=PoolScheme.MREB1,
    )


def reb1_pools(fit: FitResult, data: ClusteredDataset) -> ResamplingPools:
    _check_shapes(fit, data)
    u_pool = _scaled(
        _centred_u(fit),
        np.sqrt(fit.theta_hat.sigma2_u),
        float(np.mean(fit.u_hat ** 2)),
        "u_pool",
    )
    return ResamplingPools(
        u_pool=u_pool,
        e_pool=_residuals_over_units(fit),
        cluster_sizes=data.cluster_sizes,
        donor_sizes=np.ones(data.D),
        scheme=PoolScheme.REB1,
    )


def identity_pools(
    fit: FitResult, data: ClusteredDataset, donor_scheme: DonorScheme = DonorScheme.SRS
) -> ResamplingPools:
    _check_shapes(fit, data)
    donor_scheme = DonorScheme(donor_scheme)
    if donor_scheme == DonorScheme.PPS:
        donor_sizes, scheme = data.cluster_sizes.astype(float), PoolScheme.IDENTITY_PPS
    else:
        donor_sizes, scheme = np.ones(data.D), PoolScheme.IDENTITY_SRS
    return ResamplingPools(
        u_pool=np.array(fit.u_hat, copy=True),
        e_pool=np.array(fit.e_hat, copy=True),
        cluster_sizes=data.cluster_sizes,
        donor_sizes=donor_sizes,
        scheme=scheme,
    )


def cgr_pools(fit: FitResult, data: ClusteredDataset) -> ResamplingPools:
    """
    EBLUPs scaled without centring, conditional residuals pooled globally;
    a zero EBLUP vector (sigma2_u at the boundary) is degenerate here
    """
    _check_shapes(fit, data)
    u_square = float(np.mean(fit.u_eblup ** 2))
    if not u_square > 0.0:
        raise DegeneratePoolError("u_pool", "all EBLUPs are zero")
    e_square = float(np.mean(fit.eps_hat ** 2))
    if not e_square > 0.0:
        raise DegeneratePoolError("e_pool", "all conditional residuals are zero")
    return ResamplingPools(
        u_pool=fit.u_eblup * (np.sqrt(fit.theta_hat.sigma2_u) / np.sqrt(u_square)),
        e_pool=fit.eps_hat * (np.sqrt(fit.theta_hat.sigma2_e) / np.sqrt(e_square)),
        cluster_sizes=data.cluster_sizes,
        donor_sizes=np.ones(data.D),
        scheme=PoolScheme.CGR,
        global_residuals=True,
    )


def exact_moments(
    pools: ResamplingPools, target_cluster: Optional[int] = None
) -> BootstrapMoments:
    """
    Bootstrap moments of u* and e* by enumerating selection probabilities.
    With target_cluster set the residuals come from that cluster's own pool
    (no donor sampling).
    """
    u_mean = float(np.mean(pools.u_pool))
    u_second = float(np.mean(pools.u_pool ** 2))
    if pools.global_residuals:
        e_mean = float(np.mean(pools.e_pool))
        e_second = float(np.mean(pools.e_pool ** 2))
    elif target_cluster is not None:
        own = pools.e_pool_for(target_cluster)
        e_mean, e_second = float(np.mean(own)), float(np.mean(own ** 2))
    else:
        n_units = np.repeat(pools.cluster_sizes, pools.cluster_sizes).astype(float)
        unit_weights = np.repeat(pools.donor_weights, pools.cluster_sizes) / n_units
        e_mean = float(np.sum(unit_weights * pools.e_pool))
        e_second = float(np.sum(unit_weights * pools.e_pool ** 2))
    return BootstrapMoments(
        u_mean=u_mean, u_second=u_second, e_mean=e_mean, e_second=e_second
    )
