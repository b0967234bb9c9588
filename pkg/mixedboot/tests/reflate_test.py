#!/usr/bin/env python3
import itertools
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

from mixedboot.lib.errors import DegeneratePoolError
from mixedboot.lib.lmm_core import ClusteredDataset, Criterion, FitResult, ThetaVector, fit
from mixedboot.lib.reflate import (
    DonorScheme,
    PoolScheme,
    cgr_pools,
    exact_moments,
    identity_pools,
    mreb1_pools,
    preb1_pools,
    reb1_pools,
)
from mixedboot.lib.simlab import EffectDistribution, default_unbalanced_profile
from mixedboot.tests.common import make_dataset, unequal_residual_dataset


def fitted_cases():
    """25 fitted datasets across cluster designs, effect sets and criteria"""
    profile = default_unbalanced_profile()
    designs = [(7,) * 20, tuple(profile[::4]), (1, 2, 3, 5, 8, 13, 21), (4,) * 12, tuple(profile[1::5])]
    dists = [EffectDistribution.NORMAL, EffectDistribution.CHISQ1]
    cases = []
    for k, (sizes, dist) in enumerate(itertools.product(designs, dists)):
        cases.append((sizes, dist, Criterion.REML if k % 2 else Criterion.ML, 100 + k))
    for k in range(15):
        sizes = designs[k % len(designs)]
        cases.append((sizes, dists[k % 2], Criterion.REML, 200 + k))
    return cases


def assert_fisher_consistent(pools, fit_result):
    moments = exact_moments(pools)
    s_u, s_e = fit_result.theta_hat.sigma2_u, fit_result.theta_hat.sigma2_e
    assert abs(moments.u_mean) <= 1e-10
    assert moments.u_second == pytest.approx(s_u, rel=1e-10, abs=1e-14)
    assert abs(moments.e_mean) <= 1e-10
    assert moments.e_second == pytest.approx(s_e, rel=1e-10)


@pytest.mark.parametrize("sizes,dist,criterion,seed", fitted_cases())
def test_prescaled_pools_match_estimated_variances(sizes, dist, criterion, seed):
    data = make_dataset(sizes, seed=seed, effect_dist=dist)
    result = fit(data, criterion)
    assert_fisher_consistent(preb1_pools(result, data), result)
    assert_fisher_consistent(mreb1_pools(result, data), result)


def test_reb1_misses_residual_second_moment_when_unbalanced():
    data = unequal_residual_dataset()
    result = fit(data, Criterion.REML)
    moments = exact_moments(reb1_pools(result, data))
    deviation = abs(moments.e_second - result.theta_hat.sigma2_e) / result.theta_hat.sigma2_e
    assert deviation > 1e-3


def synthetic_fit(data: ClusteredDataset, beta, sigma2_u: float, sigma2_e: float) -> FitResult:
    """fit-shaped residual decomposition at a fixed theta"""
    theta = ThetaVector(beta=np.asarray(beta, dtype=float), sigma2_u=sigma2_u, sigma2_e=sigma2_e)
    fitted = data.X @ theta.beta
    r = data.y - fitted
    u_hat = data.cluster_sums(r) / data.cluster_sizes
    e_hat = r - np.repeat(u_hat, data.cluster_sizes)
    return FitResult(
        theta_hat=theta,
        criterion=Criterion.ML,
        loglik=0.0,
        cluster_sizes=data.cluster_sizes,
        fitted=fitted,
        marginal_residuals=r,
        u_hat=u_hat,
        e_hat=e_hat,
        u_eblup=u_hat,
        eps_hat=e_hat,
        converged=True,
        iterations=0,
    )


def test_mreb1_second_moment_by_full_enumeration():
    data = ClusteredDataset(
        cluster_sizes=np.array([1, 2]), y=np.array([0.3, 1.1, -0.4]), X=np.ones((3, 1))
    )
    result = synthetic_fit(data, [0.2], sigma2_u=0.05, sigma2_e=0.3)
    pools = mreb1_pools(result, data)
    blocks = pools.e_pools

    mean, second = 0.0, 0.0
    # SRS donor for the target cluster, then one SRS draw inside the donor
    for donor in range(data.D):
        for value in blocks[donor]:
            probability = (1.0 / data.D) * (1.0 / blocks[donor].shape[0])
            mean += probability * value
            second += probability * value ** 2
    assert abs(mean) <= 1e-12
    assert second == pytest.approx(0.3, rel=1e-10)
    assert exact_moments(pools).e_second == pytest.approx(second, rel=1e-12)


def test_cluster_pools_from_hand_arithmetic():
    # cluster means 1, 2, 6 give u_hat = (1, 2, 6) around beta0 = 0
    data = ClusteredDataset(
        cluster_sizes=np.array([2, 2, 2]),
        y=np.array([0.5, 1.5, 2.0, 2.0, 5.0, 7.0]),
        X=np.ones((6, 1)),
    )
    result = synthetic_fit(data, [0.0], sigma2_u=1.0, sigma2_e=0.5)
    np.testing.assert_allclose(result.u_hat, [1.0, 2.0, 6.0])
    centred = np.array([-2.0, -1.0, 3.0])
    np.testing.assert_allclose(
        preb1_pools(result, data).u_pool, centred / np.sqrt(14.0 / 3.0), rtol=1e-14
    )
    reb1 = reb1_pools(result, data).u_pool
    np.testing.assert_allclose(reb1, centred / np.sqrt(41.0 / 3.0), rtol=1e-14)
    assert np.mean(reb1 ** 2) == pytest.approx(14.0 / 41.0, rel=1e-14)


def test_balanced_prescaled_and_reb1_pools_coincide():
    data = make_dataset((7,) * 30, seed=44, sigma2_u=0.2)
    result = fit(data)
    preb1, reb1 = preb1_pools(result, data), reb1_pools(result, data)
    np.testing.assert_allclose(preb1.u_pool, reb1.u_pool, rtol=1e-10, atol=1e-14)
    np.testing.assert_array_equal(preb1.e_pool, reb1.e_pool)
    np.testing.assert_array_equal(preb1.donor_weights, reb1.donor_weights)


@pytest.mark.parametrize("builder", [preb1_pools, mreb1_pools, reb1_pools])
def test_pools_scale_with_the_response(builder):
    data = make_dataset((3, 8, 2, 5, 6, 4), seed=18, sigma2_u=0.3)
    c = 3.5
    scaled_data = data.with_responses(c * data.y)
    base = builder(fit(data), data)
    scaled = builder(fit(scaled_data), scaled_data)
    np.testing.assert_allclose(scaled.u_pool, c * base.u_pool, rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(scaled.e_pool, c * base.e_pool, rtol=1e-6, atol=1e-10)


def test_identity_pools_use_raw_predictors():
    data = make_dataset((2, 5, 3, 4), seed=6)
    result = fit(data)
    pps = identity_pools(result, data, DonorScheme.PPS)
    srs = identity_pools(result, data, DonorScheme.SRS)
    np.testing.assert_array_equal(pps.u_pool, result.u_hat)
    np.testing.assert_array_equal(srs.e_pool, result.e_hat)
    np.testing.assert_array_equal(pps.donor_sizes, [2, 5, 3, 4])
    np.testing.assert_array_equal(srs.donor_sizes, np.ones(4))
    assert pps.scheme == PoolScheme.IDENTITY_PPS
    np.testing.assert_allclose(pps.donor_weights, np.array([2, 5, 3, 4]) / 14.0)


def test_pool_slices_follow_cluster_layout():
    data = make_dataset((3, 1, 2), seed=2)
    pools = preb1_pools(fit(data), data)
    assert [block.shape[0] for block in pools.e_pools] == [3, 1, 2]
    np.testing.assert_array_equal(pools.e_pool_for(2), pools.e_pool[4:6])


def test_cgr_pools_are_scaled_and_global():
    data = make_dataset((4, 6, 5, 3, 7, 2), seed=14, sigma2_u=0.5, sigma2_e=0.2)
    result = fit(data)
    pools = cgr_pools(result, data)
    assert pools.global_residuals
    assert np.mean(pools.u_pool ** 2) == pytest.approx(result.theta_hat.sigma2_u, rel=1e-10)
    assert np.mean(pools.e_pool ** 2) == pytest.approx(result.theta_hat.sigma2_e, rel=1e-10)
    moments = exact_moments(pools)
    assert moments.e_second == pytest.approx(result.theta_hat.sigma2_e, rel=1e-10)


def test_cgr_pools_degenerate_on_boundary_fit():
    y = np.tile([1.0, 2.0, 3.0], 4)
    data = ClusteredDataset(cluster_sizes=np.full(4, 3), y=y, X=np.ones((12, 1)))
    result = fit(data, Criterion.ML)
    assert result.boundary
    with pytest.raises(DegeneratePoolError):
        cgr_pools(result, data)
    # the u pool collapses to zeros instead of failing
    np.testing.assert_array_equal(preb1_pools(result, data).u_pool, np.zeros(4))


def test_own_cluster_moments():
    data = make_dataset((3, 4), seed=30)
    pools = identity_pools(fit(data), data)
    own = exact_moments(pools, target_cluster=1)
    assert own.e_second == pytest.approx(np.mean(pools.e_pool_for(1) ** 2))


if __name__ == "__main__":
    test_reb1_misses_residual_second_moment_when_unbalanced()
    test_mreb1_second_moment_by_full_enumeration()
