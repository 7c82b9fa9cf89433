"""State evolution and Stein-type risk estimation.

The K x K matrix Sigma collects (co)variances of the K estimation errors;
it exists in three flavors: the oracle version computed against the truth,
the Stein-type data-only estimator built from the debiased iterates, and
theoretical values from the Monte Carlo fixed point of the state-evolution
system.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import SquaredLoss, rescaled_score
from .model import DistributionSpec
from .solver import calibrate_b_target, soft_threshold


@dataclass(frozen=True)
class SigmaMatrix:
    K: int
    entries: np.ndarray
    kind: str  # "oracle" | "stein" | "theoretical"

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (self.K, self.K):
            raise ValueError(f"entries must be {self.K}x{self.K}")
        if np.max(np.abs(e - e.T)) > 1e-12 * max(1.0, np.max(np.abs(e))):
            raise ValueError("Sigma matrix must be symmetric")
        object.__setattr__(self, "entries", e)


@dataclass(frozen=True)
class StateEvolutionPoint:
    zeta_sq: float
    sigma_sq: float
    b: float
    converged: bool


def empirical_state_evolution(z, b, loss, delta, omega) -> float:
    """Mean squared rescaled score over the adjusted residuals."""
    g = rescaled_score(loss, z, b, delta, omega)
    return float(np.mean(g**2))


def cross_zeta(beta_tilde_1, beta_tilde_2) -> float:
    """Sample covariance (1/(p-1)) between two debiased coefficient vectors."""
    a = np.asarray(beta_tilde_1, dtype=float)
    b = np.asarray(beta_tilde_2, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be equal-length vectors")
    if a.size < 2:
        raise ValueError("need at least two coordinates")
    return float(np.dot(a - a.mean(), b - b.mean()) / (a.size - 1))


def _stein_entry(bt1, bt2, th1, th2, zeta) -> float:
    prod = (soft_threshold(bt1, th1) - bt1) * (soft_threshold(bt2, th2) - bt2)
    ind = (np.abs(bt1) >= th1).astype(float) + (np.abs(bt2) >= th2)
    return float(-zeta + np.mean(prod) + zeta * np.mean(ind))


def composite_amse_hat(beta_tilde, theta, zeta_emp_sq) -> float:
    """Stein-type risk estimate for a single soft-thresholded estimator."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    bt = np.asarray(beta_tilde, dtype=float)
    return _stein_entry(bt, bt, theta, theta, zeta_emp_sq)


def stein_sigma_hat(beta_tildes, thetas, cross_zetas) -> SigmaMatrix:
    """Data-only unbiased estimator of the K x K error cross-product matrix.

    ``cross_zetas`` supplies the (co)variances of the Gaussian noise around
    the truth in each debiased vector (see :func:`cross_zeta_matrix` for the
    estimator used by the pipeline).
    """
    bts = [np.asarray(bt, dtype=float) for bt in beta_tildes]
    thetas = np.asarray(thetas, dtype=float)
    K = len(bts)
    if thetas.shape != (K,):
        raise ValueError("thetas must have one entry per estimator")
    if np.any(thetas < 0):
        raise ValueError("thetas must be nonnegative")
    zz = np.asarray(cross_zetas, dtype=float)
    if zz.shape != (K, K):
        raise ValueError("cross_zetas must be K x K")
    p = bts[0].size
    if any(bt.size != p for bt in bts):
        raise ValueError("all debiased vectors must share the same length")
    ent = np.empty((K, K))
    for k1 in range(K):
        for k2 in range(k1, K):
            val = _stein_entry(bts[k1], bts[k2], thetas[k1], thetas[k2], zz[k1, k2])
            ent[k1, k2] = ent[k2, k1] = val
    return SigmaMatrix(K=K, entries=0.5 * (ent + ent.T), kind="stein")


def cross_zeta_matrix(beta_tildes, zeta_emp_sqs) -> np.ndarray:
    """Noise (co)variance matrix of the debiased vectors.

    Diagonals come from the per-run state-evolution values (which are free
    of the coefficient-distribution variance).  Off-diagonals use the
    polarization identity on the difference vector, in which the common
    truth cancels: cov = (zeta_1^2 + zeta_2^2 - var(bt_1 - bt_2)) / 2.
    """
    K = len(beta_tildes)
    zeta = np.asarray(zeta_emp_sqs, dtype=float)
    out = np.diag(zeta.copy())
    for k1 in range(K):
        for k2 in range(k1 + 1, K):
            d = np.asarray(beta_tildes[k1]) - np.asarray(beta_tildes[k2])
            v = float(np.var(d, ddof=1))
            out[k1, k2] = out[k2, k1] = 0.5 * (zeta[k1] + zeta[k2] - v)
    return out


def empirical_sigma_oracle(beta_hats, beta_true) -> SigmaMatrix:
    """p^-1 sum_j (bhat_{k1,j} - beta_j)(bhat_{k2,j} - beta_j), all pairs."""
    if beta_true is None:
        raise ValueError("oracle Sigma needs the true coefficient vector")
    beta = np.asarray(beta_true, dtype=float)
    errs = np.stack([np.asarray(bh, dtype=float) - beta for bh in beta_hats])
    ent = errs @ errs.T / beta.size
    return SigmaMatrix(K=len(beta_hats), entries=0.5 * (ent + ent.T), kind="oracle")


def _draws(dist_or_samples, size, rng):
    if isinstance(dist_or_samples, DistributionSpec):
        x = dist_or_samples.sample(size, rng)
        if dist_or_samples.target_sd is not None:
            x = x - x.mean()
            sd = x.std(ddof=1)
            if sd > 0:
                x *= dist_or_samples.target_sd / sd
        return x
    pool = np.asarray(dist_or_samples, dtype=float)
    return rng.choice(pool, size=size, replace=True)


def fixed_point_state_evolution(loss, eps_dist, delta, omega, mc_samples=100_000,
                                max_iters=50, ftol=1e-6, b0_dist=None, alpha=None,
                                seed=0, zeta_init=None, b_max_multiplier=10.0,
                                n_points=400) -> StateEvolutionPoint:
    """Monte Carlo fixed point of the large-system state evolution.

    The Gaussian smear variance fed into the score argument is closed in one
    of three ways: identity-threshold closure sigma^2 = zeta^2 / delta when
    omega == 1 (dense regime); the soft-threshold closure through the
    coefficient law when ``b0_dist`` and ``alpha`` are given; otherwise
    sigma = zeta (the abbreviated published form).

    Common random numbers across iterations make the update map
    deterministic, so the stopping rule is exact.
    """
    if mc_samples < 10_000:
        raise ValueError("mc_samples must be at least 1e4")
    rng = np.random.default_rng(seed)
    eps = _draws(eps_dist, mc_samples, rng)
    Z = rng.standard_normal(mc_samples)
    B0 = Zb = None
    if b0_dist is not None:
        if alpha is None:
            raise ValueError("the sparse closure needs both b0_dist and alpha")
        B0 = _draws(b0_dist, mc_samples, rng)
        Zb = rng.standard_normal(mc_samples)

    zeta_sq = float(np.mean(eps**2)) if zeta_init is None else float(zeta_init)
    b = 1.0
    sigma_sq = zeta_sq
    converged = False
    for _ in range(max_iters):
        if omega == 1.0:
            sigma_sq = zeta_sq / delta
        elif B0 is not None:
            theta = alpha * np.sqrt(zeta_sq)
            err = soft_threshold(B0 + np.sqrt(zeta_sq) * Zb, theta) - B0
            sigma_sq = float(np.mean(err**2)) / delta
        else:
            sigma_sq = zeta_sq
        arg = eps + np.sqrt(sigma_sq) * Z
        if arg.std(ddof=1) > 0:
            b = calibrate_b_target(arg, loss, omega / delta, b_max_multiplier,
                                   n_points)
        g = rescaled_score(loss, arg, b, delta, omega)
        zeta_new = float(np.mean(g**2))
        if abs(zeta_new - zeta_sq) <= ftol:
            zeta_sq = zeta_new
            converged = True
            break
        zeta_sq = zeta_new
    return StateEvolutionPoint(zeta_sq=zeta_sq, sigma_sq=sigma_sq, b=b,
                               converged=converged)


def huber_variance(loss, b, f_tilde, mc_samples=100_000, seed=0) -> float:
    """Sandwich variance E[score^2] / E[score slope]^2 under f_tilde.

    ``f_tilde`` is a DistributionSpec or an array of draws from the
    effective residual law (noise convolved with the Gaussian smear).
    """
    if b <= 0:
        raise ValueError("b must be positive")
    rng = np.random.default_rng(seed)
    x = _draws(f_tilde, mc_samples, rng)
    num = float(np.mean(loss.effective_score(x, b) ** 2))
    den = float(np.mean(loss.score_slope(x, b)))
    if den <= 0:
        raise RuntimeError("score-slope estimate is nonpositive; cannot form variance")
    return num / den**2


def dense_sigma_emp(beta_hats) -> SigmaMatrix:
    """Sample-covariance variance matrix for dense-regime estimators."""
    K = len(beta_hats)
    ent = np.empty((K, K))
    for k1 in range(K):
        for k2 in range(k1, K):
            ent[k1, k2] = ent[k2, k1] = cross_zeta(beta_hats[k1], beta_hats[k2])
    return SigmaMatrix(K=K, entries=ent, kind="stein")
