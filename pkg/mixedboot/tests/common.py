#!/usr/bin/env python3
import os
from typing import Optional, Sequence, Tuple

import numpy as np

from mixedboot.lib.lmm_core import ClusteredDataset, Criterion, profile_loglik
from mixedboot.lib.simlab import EffectDistribution, SimulationScenario, generate_dataset

DATA_FOLDER: str = os.path.join(os.path.dirname(os.path.realpath(__file__)), "data")


def data_file(name: str) -> str:
    return os.path.join(DATA_FOLDER, name)


def make_dataset(
    sizes: Sequence[int],
    seed: int = 1,
    beta: Tuple[float, ...] = (1.0, 2.0),
    sigma2_u: float = 0.04,
    sigma2_e: float = 0.16,
    effect_dist: EffectDistribution = EffectDistribution.NORMAL,
    sim_index: int = 0,
) -> ClusteredDataset:
    scenario = SimulationScenario(
        name="test",
        cluster_sizes=tuple(sizes),
        beta=beta,
        sigma2_u=sigma2_u,
        sigma2_e=sigma2_e,
        effect_dist=effect_dist,
        R=1,
        B=1,
        seed=seed,
    )
    data, _ = generate_dataset(scenario, sim_index)
    return data


def unequal_residual_dataset(seed: int = 5) -> ClusteredDataset:
    """large clusters noisy, small clusters quiet"""
    rng = np.random.default_rng(seed)
    sizes = np.array([2, 2, 2, 2, 12, 12, 12])
    sd = np.where(sizes > 2, 3.0, 0.3)
    u = 0.5 * rng.standard_normal(sizes.shape[0])
    x = rng.random(int(sizes.sum()))
    e = np.repeat(sd, sizes) * rng.standard_normal(int(sizes.sum()))
    y = 1.0 + 2.0 * x + np.repeat(u, sizes) + e
    return ClusteredDataset(cluster_sizes=sizes, y=y, X=np.column_stack([np.ones_like(x), x]))


def dense_loglik(data: ClusteredDataset, beta: np.ndarray, sigma2_u: float, sigma2_e: float) -> float:
    """N x N evaluation, same additive constant as the closed form"""
    Z = np.repeat(np.eye(data.D), data.cluster_sizes, axis=0)
    V = sigma2_u * Z @ Z.T + sigma2_e * np.eye(data.N)
    r = data.y - data.X @ beta
    _, logdet = np.linalg.slogdet(V)
    return -0.5 * (logdet + float(r @ np.linalg.solve(V, r)))


def grid_search_fit(
    data: ClusteredDataset,
    criterion: Criterion,
    weights: Optional[np.ndarray] = None,
    resolution: float = 1e-4,
) -> np.ndarray:
    """
    Brute force maximizer of the profile criterion over (sigma2_u, sigma2_e),
    refining a 21 x 21 grid around the incumbent until the spacing reaches
    resolution. Returns (beta..., sigma2_u, sigma2_e).
    """
    scale = float(np.var(data.y)) * 4.0 + 1e-3

    def value(s_u: float, s_e: float) -> float:
        return profile_loglik(data, s_u, s_e, criterion, weights)[0]

    centre = np.array([scale / 2.0, scale / 2.0])
    half = np.array([scale / 2.0, scale / 2.0])
    best = None
    while True:
        u_axis = np.linspace(max(0.0, centre[0] - half[0]), centre[0] + half[0], 21)
        e_axis = np.linspace(max(1e-6, centre[1] - half[1]), centre[1] + half[1], 21)
        candidates = [(value(s_u, s_e), s_u, s_e) for s_u in u_axis for s_e in e_axis]
        best = max(candidates)
        centre = np.array([best[1], best[2]])
        step = max(u_axis[1] - u_axis[0], e_axis[1] - e_axis[0])
        if step <= resolution:
            break
        half = np.array([2.0 * (u_axis[1] - u_axis[0]), 2.0 * (e_axis[1] - e_axis[0])])

    _, s_u, s_e = best
    beta = profile_loglik(data, s_u, s_e, criterion, weights)[1]
    return np.concatenate((beta, [s_u, s_e]))
