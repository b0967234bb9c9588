#!/usr/bin/env python3
"""
Random intercept linear mixed model

    y_ij = x_ij' beta + u_i + e_ij,  var(u_i) = sigma2_u, var(e_ij) = sigma2_e

fitted by ML or REML under a Gaussian working likelihood. Per-cluster inverse
and log-determinant use the closed forms of sigma2_u * 11' + sigma2_e * I, so
the N x N covariance is never built. Additive constants are dropped from both
criteria.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from mixedboot.lib.errors import (
    DataError,
    DomainError,
    FitConvergenceError,
    SingularDesignError,
)

SIGMA2_E_FLOOR: float = 1e-12


class Criterion(str, Enum):
    ML = "ML"
    REML = "REML"

    @classmethod
    def parse(cls, value) -> "Criterion":
        if isinstance(value, Criterion):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise DataError(
                "Invalid criterion %s, valid options are %s"
                % (value, [c.value for c in cls])
            )


def parameter_names(p: int) -> List[str]:
    return [f"beta{k}" for k in range(p)] + ["sigma2_u", "sigma2_e"]


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ClusteredDataset:
    """
    Stacked responses and covariates, rows grouped by cluster in cluster order.
    The first column of X is the intercept.
    """

    cluster_sizes: np.ndarray
    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.cluster_sizes)
        if sizes.ndim != 1 or sizes.size < 2:
            raise DataError("at least two clusters are required")
        if not np.all(np.equal(np.mod(sizes, 1), 0)) or np.any(sizes < 1):
            raise DataError("cluster sizes must be positive integers")
        sizes = sizes.astype(np.int64)
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2:
            raise DataError("y must be a vector and X a matrix")
        if y.shape[0] != int(sizes.sum()) or X.shape[0] != y.shape[0]:
            raise DataError(
                f"cluster sizes sum to {int(sizes.sum())} but y has {y.shape[0]} "
                f"rows and X has {X.shape[0]} rows"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise DataError("responses and covariates must be finite")
        object.__setattr__(self, "cluster_sizes", _readonly(sizes))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "X", _readonly(X))

    @classmethod
    def from_clusters(
        cls, responses: Sequence[Sequence[float]], covariates: Sequence[np.ndarray]
    ) -> "ClusteredDataset":
        if len(responses) != len(covariates):
            raise DataError("responses and covariates list different cluster counts")
        sizes = [len(y_i) for y_i in responses]
        X_blocks = [np.atleast_2d(np.asarray(X_i, dtype=float)) for X_i in covariates]
        widths = {block.shape[1] for block in X_blocks}
        if len(widths) != 1:
            raise DataError(f"covariate width differs across clusters: {widths}")
        return cls(
            cluster_sizes=np.array(sizes),
            y=np.concatenate([np.asarray(y_i, dtype=float) for y_i in responses]),
            X=np.vstack(X_blocks),
        )

    @property
    def D(self) -> int:
        return int(self.cluster_sizes.shape[0])

    @property
    def N(self) -> int:
        return int(self.y.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.cluster_sizes)[:-1]))

    @property
    def cluster_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.D), self.cluster_sizes)

    @property
    def is_balanced(self) -> bool:
        return bool(np.all(self.cluster_sizes == self.cluster_sizes[0]))

    @property
    def responses(self) -> List[np.ndarray]:
        return self.split(self.y)

    @property
    def covariates(self) -> List[np.ndarray]:
        return self.split(self.X)

    def split(self, stacked: np.ndarray) -> List[np.ndarray]:
        return np.split(np.asarray(stacked), np.cumsum(self.cluster_sizes)[:-1])

    def cluster_sums(self, stacked: np.ndarray) -> np.ndarray:
        return np.add.reduceat(np.asarray(stacked, dtype=float), self.offsets, axis=0)

    def with_responses(self, y: np.ndarray) -> "ClusteredDataset":
        return ClusteredDataset(cluster_sizes=self.cluster_sizes, y=y, X=self.X)

    def take_clusters(self, indices: Sequence[int]) -> "ClusteredDataset":
        """stack the chosen clusters (repeats allowed) into a new dataset"""
        indices = np.asarray(indices, dtype=np.int64)
        starts = self.offsets[indices]
        sizes = self.cluster_sizes[indices]
        rows = np.concatenate(
            [np.arange(start, start + size) for start, size in zip(starts, sizes)]
        )
        return ClusteredDataset(cluster_sizes=sizes, y=self.y[rows], X=self.X[rows])

    def permute_units(self, order_within: Sequence[np.ndarray]) -> "ClusteredDataset":
        rows = np.concatenate(
            [
                start + np.asarray(order, dtype=np.int64)
                for start, order in zip(self.offsets, order_within)
            ]
        )
        return ClusteredDataset(
            cluster_sizes=self.cluster_sizes, y=self.y[rows], X=self.X[rows]
        )


@dataclass(frozen=True, eq=False)
class ThetaVector:
    beta: np.ndarray
    sigma2_u: float
    sigma2_e: float

    def __post_init__(self):
        object.__setattr__(self, "beta", _readonly(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "sigma2_u", float(self.sigma2_u))
        object.__setattr__(self, "sigma2_e", float(self.sigma2_e))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ThetaVector":
        values = np.asarray(values, dtype=float)
        return cls(beta=values[:-2], sigma2_u=values[-2], sigma2_e=values[-1])

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.beta, [self.sigma2_u, self.sigma2_e]))

    @property
    def signal_to_noise(self) -> float:
        return self.sigma2_u / self.sigma2_e

    def check_domain(self, p: Optional[int] = None) -> None:
        if p is not None and self.beta.shape[0] != p:
            raise DomainError(f"beta has length {self.beta.shape[0]}, expected {p}")
        if not self.sigma2_u >= 0.0:
            raise DomainError(f"sigma2_u must be >= 0, got {self.sigma2_u}")
        if not self.sigma2_e > 0.0:
            raise DomainError(f"sigma2_e must be > 0, got {self.sigma2_e}")


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 500
    # relative loglik change and projected gradient norm
    ftol: float = 1e-10
    gtol: float = 1e-8
    # accepted when the optimizer stalls on round-off with a small scaled gradient
    stall_gtol: float = 1e-5
    newton_iterations: int = 25
    multi_start: bool = True


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: ThetaVector
    criterion: Criterion
    loglik: float
    cluster_sizes: np.ndarray
    fitted: np.ndarray
    marginal_residuals: np.ndarray
    u_hat: np.ndarray
    e_hat: np.ndarray
    u_eblup: np.ndarray
    eps_hat: np.ndarray
    converged: bool
    iterations: int
    boundary: bool = False
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def shrinkage(self) -> np.ndarray:
        s_u, s_e = self.theta_hat.sigma2_u, self.theta_hat.sigma2_e
        n = self.cluster_sizes
        return n * s_u / (s_e + n * s_u)

    def per_cluster(self, stacked: np.ndarray) -> List[np.ndarray]:
        return np.split(np.asarray(stacked), np.cumsum(self.cluster_sizes)[:-1])


class _SufficientStatistics:
    """per-cluster cross products, computed once per dataset"""

    def __init__(self, data: ClusteredDataset):
        self.data = data
        self.n: np.ndarray = data.cluster_sizes.astype(float)
        self.Sx: np.ndarray = data.cluster_sums(data.X)
        self.Sy: np.ndarray = data.cluster_sums(data.y)
        self.XtX: np.ndarray = data.cluster_sums(data.X[:, :, None] * data.X[:, None, :])
        self.Xty: np.ndarray = data.cluster_sums(data.X * data.y[:, None])
        self.SxSx: np.ndarray = self.Sx[:, :, None] * self.Sx[:, None, :]


def _check_weights(weights: Optional[np.ndarray], D: int) -> np.ndarray:
    if weights is None:
        return np.ones(D)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (D,):
        raise DomainError(f"weights must have length {D}, got {weights.shape}")
    if not np.all(weights > 0.0) or not np.all(np.isfinite(weights)):
        raise DomainError("cluster weights must be strictly positive and finite")
    return weights


class _Evaluation:
    """profile criterion, GLS beta and analytic variance-component gradient"""

    def __init__(
        self,
        stats: _SufficientStatistics,
        sigma2_u: float,
        sigma2_e: float,
        criterion: Criterion,
        weights: np.ndarray,
    ):
        data = stats.data
        n, w = stats.n, weights
        denom = sigma2_e + n * sigma2_u
        a = sigma2_u / denom

        M = (
            np.einsum("i,ijk->jk", w, stats.XtX - a[:, None, None] * stats.SxSx)
            / sigma2_e
        )
        c = np.einsum("i,ij->j", w, stats.Xty - a[:, None] * stats.Sx * stats.Sy[:, None])
        c = c / sigma2_e
        try:
            chol = linalg.cho_factor(M, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            raise SingularDesignError("weighted normal equations are singular")
        diag = np.diag(chol[0])
        if np.any(diag <= 0.0) or diag.min() <= 1e-10 * diag.max():
            raise SingularDesignError("weighted normal equations are singular")

        self.beta: np.ndarray = linalg.cho_solve(chol, c)
        r = data.y - data.X @ self.beta
        R = data.cluster_sums(r)
        Q = data.cluster_sums(r * r)

        logdet = (n - 1.0) * np.log(sigma2_e) + np.log(denom)
        quad = (Q - a * R * R) / sigma2_e
        value = -0.5 * float(np.sum(w * (logdet + quad)))

        grad_u = 0.5 * float(np.sum(w * (-n / denom + (R / denom) ** 2)))
        trace_inv = n * (1.0 - a) / sigma2_e
        norm2 = (Q - 2.0 * a * R * R + a * a * n * R * R) / sigma2_e ** 2
        grad_e = 0.5 * float(np.sum(w * (-trace_inv + norm2)))

        if criterion == Criterion.REML:
            value -= float(np.sum(np.log(diag)))
            M_inv = linalg.cho_solve(chol, np.eye(M.shape[0]))
            v = stats.Sx / denom[:, None]
            dM_u = -np.einsum("i,ij,ik->jk", w, v, v)
            dM_e = -np.einsum(
                "i,ijk->jk",
                w,
                stats.XtX - (2.0 * a - a * a * n)[:, None, None] * stats.SxSx,
            ) / sigma2_e ** 2
            grad_u -= 0.5 * float(np.sum(M_inv * dM_u))
            grad_e -= 0.5 * float(np.sum(M_inv * dM_e))

        self.value: float = value
        self.gradient: np.ndarray = np.array([grad_u, grad_e])
        self.residuals: np.ndarray = r


def _validate_variances(sigma2_u: float, sigma2_e: float) -> None:
    if not sigma2_u >= 0.0:
        raise DomainError(f"sigma2_u must be >= 0, got {sigma2_u}")
    if not sigma2_e > 0.0:
        raise DomainError(f"sigma2_e must be > 0, got {sigma2_e}")


def profile_loglik(
    data: ClusteredDataset,
    sigma2_u: float,
    sigma2_e: float,
    criterion: Criterion = Criterion.ML,
    weights: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """
    (optionally cluster-weighted) log-likelihood with beta profiled out by GLS

    @return: (value, beta_gls)
    """
    _validate_variances(sigma2_u, sigma2_e)
    evaluation = _Evaluation(
        _SufficientStatistics(data),
        float(sigma2_u),
        float(sigma2_e),
        Criterion.parse(criterion),
        _check_weights(weights, data.D),
    )
    return evaluation.value, evaluation.beta


def loglik(
    data: ClusteredDataset, theta: ThetaVector, weights: Optional[np.ndarray] = None
) -> float:
    """ML log-likelihood at a full theta, beta not profiled"""
    theta.check_domain(data.p)
    w = _check_weights(weights, data.D)
    n = data.cluster_sizes.astype(float)
    s_u, s_e = theta.sigma2_u, theta.sigma2_e
    denom = s_e + n * s_u
    r = data.y - data.X @ theta.beta
    R = data.cluster_sums(r)
    Q = data.cluster_sums(r * r)
    logdet = (n - 1.0) * np.log(s_e) + np.log(denom)
    quad = (Q - (s_u / denom) * R * R) / s_e
    return -0.5 * float(np.sum(w * (logdet + quad)))


def score_at(
    data: ClusteredDataset, theta: ThetaVector, weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Gradient of the ML log-likelihood, ordered (beta, sigma2_u, sigma2_e).
    The beta block is X' Sigma^-1 (y - X beta), the true derivative of the
    1/2-scaled log-likelihood.
    """
    theta.check_domain(data.p)
    w = _check_weights(weights, data.D)
    n = data.cluster_sizes.astype(float)
    s_u, s_e = theta.sigma2_u, theta.sigma2_e
    denom = s_e + n * s_u
    a = s_u / denom
    r = data.y - data.X @ theta.beta
    R = data.cluster_sums(r)
    Q = data.cluster_sums(r * r)
    Xr = data.cluster_sums(data.X * r[:, None])
    Sx = data.cluster_sums(data.X)

    grad_beta = np.einsum("i,ij->j", w, Xr - a[:, None] * Sx * R[:, None]) / s_e
    grad_u = 0.5 * np.sum(w * (-n / denom + (R / denom) ** 2))
    grad_e = 0.5 * np.sum(
        w
        * (
            -n * (1.0 - a) / s_e
            + (Q - 2.0 * a * R * R + a * a * n * R * R) / s_e ** 2
        )
    )
    return np.concatenate((grad_beta, [grad_u, grad_e]))


def _weighted_ols(data: ClusteredDataset, w_units: np.ndarray) -> np.ndarray:
    Xw = data.X * np.sqrt(w_units)[:, None]
    yw = data.y * np.sqrt(w_units)
    beta, _, rank, _ = np.linalg.lstsq(Xw, yw, rcond=None)
    if rank < data.p:
        raise SingularDesignError(
            f"design matrix has rank {rank}, {data.p} columns required"
        )
    return beta


def moment_start(
    data: ClusteredDataset, weights: Optional[np.ndarray] = None
) -> Tuple[float, float]:
    """method-of-moments starting values from an OLS prefit"""
    w = _check_weights(weights, data.D)
    n = data.cluster_sizes.astype(float)
    beta = _weighted_ols(data, np.repeat(w, data.cluster_sizes))
    r = data.y - data.X @ beta
    u_hat = data.cluster_sums(r) / n
    within = r - np.repeat(u_hat, data.cluster_sizes)
    total_var = float(np.var(r))
    if data.N > data.D:
        sigma2_e = float(np.sum(within ** 2)) / (data.N - data.D)
    else:
        sigma2_e = 0.5 * total_var
    if sigma2_e <= SIGMA2_E_FLOOR:
        sigma2_e = max(0.5 * total_var, SIGMA2_E_FLOOR * 10.0)
    sigma2_u = max(0.0, float(np.var(u_hat, ddof=1)) - float(np.mean(sigma2_e / n)))
    return sigma2_u, sigma2_e


class _ProfileProblem:
    def __init__(
        self, data: ClusteredDataset, criterion: Criterion, weights: np.ndarray
    ):
        self.stats = _SufficientStatistics(data)
        self.criterion = criterion
        self.weights = weights
        self.evaluations = 0

    def evaluate(self, v: np.ndarray) -> _Evaluation:
        self.evaluations += 1
        return _Evaluation(
            self.stats, float(v[0]), float(v[1]), self.criterion, self.weights
        )


def _projected_gradient(v: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    projected = gradient.copy()
    if v[0] <= 0.0 and projected[0] < 0.0:
        projected[0] = 0.0
    if v[1] <= SIGMA2_E_FLOOR and projected[1] < 0.0:
        projected[1] = 0.0
    return projected


def _quasi_newton(
    problem: _ProfileProblem, start: np.ndarray, options: FitOptions
) -> Tuple[np.ndarray, int]:
    """L-BFGS-B on scaled (sigma2_u, sigma2_e) with the bounds as projection"""
    scale = max(float(start[1]), SIGMA2_E_FLOOR * 10.0)
    norm = float(problem.stats.data.N)

    def objective(z: np.ndarray) -> Tuple[float, np.ndarray]:
        evaluation = problem.evaluate(z * scale)
        return -evaluation.value / norm, -evaluation.gradient * scale / norm

    result = optimize.minimize(
        objective,
        start / scale,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None), (SIGMA2_E_FLOOR / scale, None)],
        options={
            "maxiter": options.max_iterations,
            "ftol": options.ftol,
            "gtol": options.gtol,
        },
    )
    v = np.asarray(result.x, dtype=float) * scale
    v[0] = max(v[0], 0.0)
    v[1] = max(v[1], SIGMA2_E_FLOOR)
    return v, int(result.nit)


def _newton_polish(
    problem: _ProfileProblem, v: np.ndarray, options: FitOptions
) -> Tuple[np.ndarray, _Evaluation, int, float]:
    """
    Newton steps with a finite-difference Hessian of the analytic gradient,
    sigma2_u is pinned at zero when the gradient pushes it through the bound
    """
    current = problem.evaluate(v)
    iterations = 0
    relative_change = np.inf
    for iterations in range(1, options.newton_iterations + 1):
        pg = _projected_gradient(v, current.gradient)
        if np.linalg.norm(pg) <= options.gtol:
            break
        free = np.array([not (v[0] <= 0.0 and current.gradient[0] <= 0.0), True])
        idx = np.flatnonzero(free)
        hessian = np.zeros((2, 2))
        for k in idx:
            h = 1e-6 * max(v[k], 1e-4 * v[1])
            up, down = v.copy(), v.copy()
            up[k] += h
            down[k] -= h
            if down[k] <= (0.0 if k == 0 else SIGMA2_E_FLOOR):
                down[k] = v[k]
                hessian[:, k] = (problem.evaluate(up).gradient - current.gradient) / h
            else:
                hessian[:, k] = (
                    problem.evaluate(up).gradient - problem.evaluate(down).gradient
                ) / (2.0 * h)
        sub = 0.5 * (hessian[np.ix_(idx, idx)] + hessian[np.ix_(idx, idx)].T)
        if np.any(np.linalg.eigvalsh(sub) >= 0.0):
            break
        step = np.zeros(2)
        step[idx] = -np.linalg.solve(sub, current.gradient[idx])

        accepted = False
        t = 1.0
        while t >= 1.0 / 1024.0:
            candidate = v + t * step
            candidate[0] = max(candidate[0], 0.0)
            candidate[1] = max(candidate[1], SIGMA2_E_FLOOR)
            trial = problem.evaluate(candidate)
            if trial.value >= current.value - 1e-14 * abs(current.value):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        relative_change = abs(trial.value - current.value) / max(1.0, abs(current.value))
        moved = np.abs(candidate - v) > 1e-15 * np.maximum(np.abs(v), SIGMA2_E_FLOOR)
        v, current = candidate, trial
        if not np.any(moved):
            break
    return v, current, iterations, relative_change


def _is_converged(
    v: np.ndarray, evaluation: _Evaluation, relative_change: float, options: FitOptions
) -> bool:
    pg = _projected_gradient(v, evaluation.gradient)
    if np.linalg.norm(pg) <= options.gtol:
        return True
    # dimensionless gradient d l / d log(v)
    scaled = pg * np.maximum(v, SIGMA2_E_FLOOR)
    return bool(
        relative_change <= options.ftol
        and np.max(np.abs(scaled)) <= options.stall_gtol * max(1.0, abs(evaluation.value))
    )


def fit(
    data: ClusteredDataset,
    criterion: Criterion = Criterion.REML,
    opts: Optional[FitOptions] = None,
    weights: Optional[np.ndarray] = None,
) -> FitResult:
    """
    Maximize the (weighted) profile ML/REML criterion over (sigma2_u, sigma2_e)
    and derive residuals, predictors and EBLUPs at the optimum.
    """
    opts = opts or FitOptions()
    criterion = Criterion.parse(criterion)
    w = _check_weights(weights, data.D)
    if np.linalg.matrix_rank(data.X) < data.p:
        raise SingularDesignError(
            f"stacked design matrix is not of full column rank {data.p}"
        )

    problem = _ProfileProblem(data, criterion, w)
    sigma2_u0, sigma2_e0 = moment_start(data, w)
    starts = [np.array([sigma2_u0, sigma2_e0])]
    if opts.multi_start and sigma2_u0 <= 0.1 * sigma2_e0:
        starts.append(np.array([0.25 * sigma2_e0, sigma2_e0]))

    best: Optional[Tuple[float, np.ndarray, int]] = None
    for start in starts:
        try:
            v, nit = _quasi_newton(problem, start, opts)
            value = problem.evaluate(v).value
        except (FloatingPointError, ValueError, np.linalg.LinAlgError):
            continue
        if best is None or value > best[0]:
            best = (value, v, nit)
    if best is None:
        raise FitConvergenceError("no start produced a finite criterion value")

    _, v, nit = best
    v, evaluation, polish_iterations, relative_change = _newton_polish(problem, v, opts)
    iterations = nit + polish_iterations
    theta = ThetaVector(beta=evaluation.beta, sigma2_u=v[0], sigma2_e=v[1])
    if not _is_converged(v, evaluation, relative_change, opts):
        raise FitConvergenceError(
            "optimizer did not converge after %d iterations (projected gradient %s)"
            % (iterations, _projected_gradient(v, evaluation.gradient)),
            best_theta=theta,
            iterations=iterations,
        )
    return _assemble(data, theta, criterion, evaluation, iterations)


def _assemble(
    data: ClusteredDataset,
    theta: ThetaVector,
    criterion: Criterion,
    evaluation: _Evaluation,
    iterations: int,
) -> FitResult:
    n = data.cluster_sizes.astype(float)
    fitted = data.X @ theta.beta
    r = data.y - fitted
    u_hat = data.cluster_sums(r) / n
    e_hat = r - np.repeat(u_hat, data.cluster_sizes)
    shrink = n * theta.sigma2_u / (theta.sigma2_e + n * theta.sigma2_u)
    u_eblup = shrink * u_hat
    eps_hat = r - np.repeat(u_eblup, data.cluster_sizes)
    return FitResult(
        theta_hat=theta,
        criterion=criterion,
        loglik=evaluation.value,
        cluster_sizes=data.cluster_sizes,
        fitted=_readonly(fitted),
        marginal_residuals=_readonly(r),
        u_hat=_readonly(u_hat),
        e_hat=_readonly(e_hat),
        u_eblup=_readonly(u_eblup),
        eps_hat=_readonly(eps_hat),
        converged=True,
        iterations=iterations,
        boundary=bool(theta.sigma2_u == 0.0),
        gradient=_readonly(evaluation.gradient),
    )
