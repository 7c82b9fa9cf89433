"""The RAMP iteration: adjusted residuals, scale calibration, soft-thresholding.

One run is strictly sequential (each iteration feeds the next); separate
runs are independent and safe to execute concurrently.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .loss import CompositeQuantileLoss, SquaredLoss, rescaled_score
from .model import DistributionSpec, ProblemInstance


class CalibrationError(RuntimeError):
    """Grid search for the score scale b found no crossing.

    Carries the probed grid and the right-hand-side trace for diagnosis.
    """

    def __init__(self, message, grid=None, rhs=None, target=None):
        super().__init__(message)
        self.grid = grid
        self.rhs = rhs
        self.target = target


class DivergenceError(RuntimeError):
    """A RAMP iterate became non-finite; traces are attached."""

    def __init__(self, message, traces=None):
        super().__init__(message)
        self.traces = traces or {}


@dataclass
class RampConfig:
    """Knobs for a single RAMP run.

    ``s`` is the assumed sparsity; None defers to the instance's s_hint and,
    failing that, to the current support size (floored at 1).  The b grid is
    uniform on (0, b_max_multiplier * sd(z)] with b_grid_points points.

    ``kde_bandwidth`` sets both the kernel scale of the b-calibration CDF
    and the mollification scale of the effective score used inside the
    iteration (they form a matched pair: the smoothed score's average slope
    is exactly the smoothed band mass the calibration solves for).  None
    applies Silverman's rule to the current residuals each iteration.
    """

    alpha: float = 1.5
    max_iters: int = 50
    tol: float = 1e-6
    s: int | None = None
    b_max_multiplier: float = 10.0
    b_grid_points: int = 400
    kde_bandwidth: float | None = None
    dense_mode: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not self.dense_mode and self.alpha <= 0:
            raise ValueError("alpha must be positive in sparse mode")


@dataclass
class RampState:
    """Snapshot after the estimation step of iteration t - 1.

    ``beta_hat`` holds the newest iterate while z, b, theta and beta_prev are
    the lagged quantities the next residual adjustment needs.
    """

    t: int
    beta_hat: np.ndarray
    beta_prev: np.ndarray
    z: np.ndarray
    b: float
    theta: float
    zeta_emp_sq: float
    bandwidth: float = 0.0

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.beta_hat))


@dataclass
class RampResult:
    beta_hat: np.ndarray
    beta_tilde: np.ndarray
    theta: float
    b: float
    zeta_emp_sq: float
    iterations_used: int
    converged: bool
    amse_hat: float
    zeta_trace: list = field(default_factory=list)
    b_trace: list = field(default_factory=list)
    tol_trace: list = field(default_factory=list)
    zeta_drift: float = 0.0
    bandwidth: float = 0.0

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.beta_hat))

    def to_dict(self) -> dict:
        return {"theta": self.theta, "b": self.b, "zeta_emp_sq": self.zeta_emp_sq,
                "iterations_used": self.iterations_used, "converged": self.converged,
                "amse_hat": self.amse_hat, "zeta_trace": list(self.zeta_trace),
                "b_trace": list(self.b_trace), "tol_trace": list(self.tol_trace),
                "zeta_drift": self.zeta_drift, "support_size": self.support_size}


def soft_threshold(x, theta):
    """eta(x; theta) = sign(x) * max(|x| - theta, 0), componentwise."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


def empirical_cdf(sample, x):
    sample = np.sort(np.asarray(sample, dtype=float))
    return np.searchsorted(sample, np.asarray(x, dtype=float), side="right") / sample.size


def gaussian_kde_density(sample, x, bandwidth):
    """Gaussian-kernel density of ``sample`` at points ``x`` (vectorized)."""
    sample = np.asarray(sample, dtype=float)
    x = np.asarray(x, dtype=float)
    z = (sample.reshape(-1, *([1] * x.ndim)) - x) / bandwidth
    return norm.pdf(z).mean(axis=0) / bandwidth


def silverman_bandwidth(sample) -> float:
    sample = np.asarray(sample, dtype=float)
    return 1.06 * sample.std(ddof=1) * sample.size ** (-0.2)


def eq13_rhs(b_values, z, loss: CompositeQuantileLoss, bandwidth) -> np.ndarray:
    """Published form of the scale-calibration right-hand side (diagnostic).

    Kept as a faithful transcription: the F-difference plus the b-weighted
    kernel-density terms at the band edges.  Note its density correction
    cancels the leading order at small b, so it is NOT what the solver uses
    to pick b; see :func:`score_slope_average`.
    """
    b_values = np.asarray(b_values, dtype=float)
    u, h = loss.intercepts, loss.h
    K = loss.K
    n = z.size
    out = np.empty(b_values.size)
    # chunk the grid so the KDE broadcast stays within ~4e6 doubles
    chunk = max(1, int(4e6 // max(1, n * K)))
    for lo in range(0, b_values.size, chunk):
        B = b_values[lo:lo + chunk][:, None]
        pts_low = u[None, :] + B * h[None, :-1]    # u_{k+1} + b h(k), k = 0..K-1
        pts_high = u[None, :] + B * h[None, 1:]    # u_k + b h(k),     k = 1..K
        f_low = gaussian_kde_density(z, pts_low, bandwidth)
        f_high = gaussian_kde_density(z, pts_high, bandwidth)
        dens = (f_low * h[None, :-1]).sum(axis=1) - (f_high * h[None, 1:]).sum(axis=1)
        Bflat = b_values[lo:lo + chunk]
        cdf_term = empirical_cdf(z, Bflat * h[-1]) - empirical_cdf(z, Bflat * h[0])
        out[lo:lo + chunk] = Bflat * dens + cdf_term
    return out


def _smoothed_cdf(sample, x, bandwidth):
    """Gaussian-kernel smoothed empirical CDF at points x (vectorized)."""
    sample = np.asarray(sample, dtype=float)
    x = np.asarray(x, dtype=float)
    z = (x - sample.reshape(-1, *([1] * x.ndim))) / bandwidth
    return norm.cdf(z).mean(axis=0)


def score_slope_average(b_values, z, loss: CompositeQuantileLoss,
                        bandwidth) -> np.ndarray:
    """Smoothed empirical mean of the effective-score slope on a grid of b.

    The slope of the effective score is 1 exactly on the flat bands
    [u_k + b h(k-1), u_k + b h(k)] and 0 elsewhere, so the average is the
    total flat-band mass; the empirical CDF is smoothed with a Gaussian
    kernel so that the grid search sees a continuous function.
    """
    b_values = np.asarray(b_values, dtype=float)
    u, h = loss.intercepts, loss.h
    n = z.size
    out = np.empty(b_values.size)
    chunk = max(1, int(4e6 // max(1, n * loss.K)))
    for lo in range(0, b_values.size, chunk):
        B = b_values[lo:lo + chunk][:, None]
        hi_edges = u[None, :] + B * h[None, 1:]
        lo_edges = u[None, :] + B * h[None, :-1]
        mass = _smoothed_cdf(z, hi_edges, bandwidth) \
            - _smoothed_cdf(z, lo_edges, bandwidth)
        out[lo:lo + chunk] = mass.sum(axis=1)
    return out


def calibrate_b(z, loss, s: int, n: int, b_max_multiplier=10.0, n_points=400,
                kde_bandwidth=None) -> float:
    """Solve the score-slope condition for the prox scale b.

    Quantile losses: grid search bracketing the first crossing of the
    calibration equation's right-hand side with s/n; the returned b is the
    midpoint of the bracketing grid pair.  Squared loss: closed form
    b = s / (n - s).
    """
    if s < 1:
        raise ValueError("assumed sparsity s must be >= 1")
    if isinstance(loss, SquaredLoss) and n <= s:
        raise CalibrationError(
            f"squared-loss closed form needs n > s (got n={n}, s={s})")
    return calibrate_b_target(z, loss, s / n, b_max_multiplier, n_points,
                              kde_bandwidth)


def calibrate_b_target(z, loss, target: float, b_max_multiplier=10.0,
                       n_points=400, kde_bandwidth=None) -> float:
    """Same as calibrate_b with the slope target omega/delta given directly.

    The grid search brackets the first crossing of the averaged score slope
    with the target and returns the midpoint of the bracketing pair.
    """
    if not 0 < target:
        raise ValueError("calibration target must be positive")
    if isinstance(loss, SquaredLoss):
        if target >= 1:
            raise CalibrationError(
                f"squared-loss closed form needs target < 1 (got {target:.3g})")
        return target / (1.0 - target)
    z = np.asarray(z, dtype=float)
    sd = z.std(ddof=1)
    if not sd > 0:
        raise ValueError("adjusted residuals are degenerate (sd = 0)")
    grid = np.linspace(0.0, b_max_multiplier * sd, n_points + 1)[1:]
    bw = kde_bandwidth if kde_bandwidth is not None else silverman_bandwidth(z)
    slope = score_slope_average(grid, z, loss, bw)
    above = np.nonzero(slope >= target)[0]
    if above.size == 0:
        raise CalibrationError(
            f"no grid point reached the calibration target {target:.3g}",
            grid=grid, rhs=slope, target=target)
    i = int(above[0])
    lo = 0.0 if i == 0 else grid[i - 1]
    hi = grid[i]
    # refine the bracketing cell: one grid step can be coarse relative to b
    # when the target mass is small
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if score_slope_average(np.array([mid]), z, loss, bw)[0] < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _effective_omega(instance, config, current_support) -> tuple:
    """(s, omega) for the rescaled score, honoring the config and fallbacks."""
    if config.dense_mode:
        return instance.p, 1.0
    if config.s is not None:
        s = config.s
    elif instance.s_hint is not None:
        s = instance.s_hint
    else:
        s = current_support
    s = max(1, int(s))
    return s, s / instance.p


def solver_score(loss, z, b, delta, omega, bandwidth):
    """The rescaled, kernel-smoothed effective score the iteration runs on."""
    if omega <= 0 or delta <= 0:
        raise ValueError("delta and omega must be positive")
    return (delta / omega) * loss.smoothed_effective_score(z, b, bandwidth)


def adjust_residuals(instance, state: RampState | None, loss, config) -> np.ndarray:
    """Residuals plus the memory correction term.

    At t = 0 (state None) this is just Y.  Afterwards the correction adds
    n^-1 G(z_prev; b_prev) times the number of coordinates surviving the
    previous soft-threshold.
    """
    if state is None or state.t == 0:
        return instance.Y.copy()
    X, Y, n = instance.X, instance.Y, instance.n
    s, omega = _effective_omega(instance, config, state.support_size)
    G_prev = solver_score(loss, state.z, state.b, instance.delta, omega,
                          state.bandwidth)
    if config.dense_mode:
        count = instance.p
    else:
        tilde_prev = state.beta_prev + X.T @ G_prev
        count = int(np.count_nonzero(soft_threshold(tilde_prev, state.theta)))
    return Y - X @ state.beta_hat + (count / n) * G_prev


def run_single_ramp(instance: ProblemInstance, loss, config: RampConfig) -> RampResult:
    """Run the full RAMP loop until tolerance or the iteration cap.

    Returns the final iterate together with the debiased vector, threshold
    and state-evolution value of the iteration that produced it, plus full
    per-iteration traces.
    """
    from .amse import composite_amse_hat

    X, Y = instance.X, instance.Y
    n, p, delta = instance.n, instance.p, instance.delta

    def current_bandwidth(z):
        if config.kde_bandwidth is not None:
            return config.kde_bandwidth
        return silverman_bandwidth(z)

    beta_hat = np.zeros(p)
    z = Y.copy()
    s, omega = _effective_omega(instance, config, 0)
    bw = current_bandwidth(z)
    b = calibrate_b(z, loss, s, n, config.b_max_multiplier,
                    config.b_grid_points, bw)
    G_z = solver_score(loss, z, b, delta, omega, bw)
    zeta_sq = float(np.mean(G_z**2))
    theta = 0.0 if config.dense_mode else config.alpha * np.sqrt(zeta_sq)

    zeta_trace, b_trace, tol_trace = [zeta_sq], [b], []
    converged = False
    beta_tilde = beta_hat
    t_final = 0
    for t in range(config.max_iters):
        beta_tilde = beta_hat + X.T @ G_z
        if config.dense_mode:
            beta_next = beta_tilde
        else:
            beta_next = soft_threshold(beta_tilde, theta)
        if not np.all(np.isfinite(beta_next)):
            raise DivergenceError(
                f"non-finite iterate at iteration {t}",
                traces={"zeta": zeta_trace, "b": b_trace, "tol": tol_trace})
        tol = float(np.sum((beta_next - beta_hat) ** 2) / p)
        tol_trace.append(tol)
        beta_prev, beta_hat = beta_hat, beta_next
        t_final = t + 1
        if tol <= config.tol:
            converged = True
            break
        if t == config.max_iters - 1:
            break
        # prepare iteration t + 1
        support = int(np.count_nonzero(beta_hat))
        count = p if config.dense_mode else support
        z = Y - X @ beta_hat + (count / n) * G_z
        if not np.all(np.isfinite(z)):
            raise DivergenceError(
                f"non-finite residuals at iteration {t + 1}",
                traces={"zeta": zeta_trace, "b": b_trace, "tol": tol_trace})
        s, omega = _effective_omega(instance, config, support)
        bw = current_bandwidth(z)
        try:
            b = calibrate_b(z, loss, s, n, config.b_max_multiplier,
                            config.b_grid_points, bw)
        except CalibrationError as err:
            raise CalibrationError(
                f"calibration failed at iteration {t + 1}: {err}",
                grid=err.grid, rhs=err.rhs, target=err.target) from err
        G_z = solver_score(loss, z, b, delta, omega, bw)
        zeta_sq = float(np.mean(G_z**2))
        theta = 0.0 if config.dense_mode else config.alpha * np.sqrt(zeta_sq)
        zeta_trace.append(zeta_sq)
        b_trace.append(b)

    drift = abs(zeta_trace[-1] - zeta_trace[-2]) if len(zeta_trace) > 1 else 0.0
    if zeta_trace[-1] > 0 and drift > 0.1 * zeta_trace[-1]:
        warnings.warn(
            f"state-evolution value still moving at exit "
            f"(last change {drift:.3g} vs level {zeta_trace[-1]:.3g})")
    amse_hat = float(composite_amse_hat(beta_tilde, theta, zeta_trace[-1]))
    return RampResult(beta_hat=beta_hat, beta_tilde=beta_tilde, theta=theta,
                      b=b_trace[-1], zeta_emp_sq=zeta_trace[-1],
                      iterations_used=t_final, converged=converged,
                      amse_hat=amse_hat, zeta_trace=zeta_trace, b_trace=b_trace,
                      tol_trace=tol_trace, zeta_drift=drift, bandwidth=bw)


def _tail_prob(v, zeta_bar, alpha):
    """P(|v + zeta*Z| >= alpha*zeta) for scalar or vector v."""
    r = np.asarray(v, dtype=float) / zeta_bar
    return norm.cdf(r - alpha) + norm.cdf(-r - alpha)


def lambda_from_alpha(alpha, zeta_bar, b, delta, b0_dist, mc_samples=100_000,
                      seed=0) -> float:
    """Regularization level matching a threshold multiplier alpha.

    ``b0_dist`` may be a DistributionSpec, or an array of draws (for example
    the true coefficient vector itself) whose empirical law plays the role
    of the coefficient prior.
    """
    if zeta_bar <= 0 or b <= 0 or delta <= 0:
        raise ValueError("zeta_bar, b, delta must all be positive")
    if isinstance(b0_dist, DistributionSpec):
        if b0_dist.kind == "point_mass":
            prob = float(_tail_prob(b0_dist.value, zeta_bar, alpha))
        elif b0_dist.kind == "dirac_pm1":
            prob = float(0.5 * (_tail_prob(1.0, zeta_bar, alpha)
                                + _tail_prob(-1.0, zeta_bar, alpha)))
        else:
            rng = np.random.default_rng(seed)
            draws = b0_dist.sample(mc_samples, rng)
            prob = float(np.mean(_tail_prob(draws, zeta_bar, alpha)))
    else:
        prob = float(np.mean(_tail_prob(np.asarray(b0_dist, dtype=float),
                                        zeta_bar, alpha)))
    return (alpha * zeta_bar) / (b * delta) * prob


def lambda_for_equivalence(alpha, zeta_bar, b, delta, omega) -> float:
    """Penalty level whose l1 solution matches the iteration's fixed point.

    Derived from the fixed point's stationarity: for active coordinates
    X_j' G = theta sign_j with G = (delta/omega) * b * psi(prox), so the
    loss-subgradient condition X_j' psi = lambda sign_j holds with
    lambda = theta * omega / (b * delta).  Validated against exact LP
    solutions of the composite-quantile l1 problem.
    """
    if zeta_bar <= 0 or b <= 0 or delta <= 0 or omega <= 0:
        raise ValueError("zeta_bar, b, delta, omega must all be positive")
    return (alpha * zeta_bar) * omega / (b * delta)


def _loss_subgradient_vec(loss, x):
    """An a.e. derivative of the loss, vectorized (kinks get the upper value)."""
    if isinstance(loss, SquaredLoss):
        return np.asarray(x, dtype=float)
    el = np.searchsorted(loss.intercepts, np.asarray(x, dtype=float), side="right")
    return loss.h[el]


def composite_l1_objective(instance, loss, lam, beta) -> float:
    resid = instance.Y - instance.X @ beta
    return float(np.sum(loss.value(resid)) + lam * np.sum(np.abs(beta)))


def reference_composite_l1(instance, loss, lam, iters=4000,
                           step_schedule="diminishing", method="subgradient",
                           step_scale=None):
    """Best-effort minimizer of sum_i rho(Y_i - X_i beta) + lam * ||beta||_1.

    method="subgradient" runs a proximal subgradient descent with
    diminishing steps and returns the best-objective iterate plus the
    objective trace.  method="linprog" solves the (piecewise-linear)
    problem exactly with the HiGHS LP solver; only valid for quantile
    losses.
    """
    X, Y = instance.X, instance.Y
    n, p = instance.n, instance.p
    if method == "linprog":
        if isinstance(loss, SquaredLoss):
            raise ValueError("linprog oracle requires a piecewise-linear loss")
        beta = _composite_l1_linprog(X, Y, loss, lam)
        return beta, [composite_l1_objective(instance, loss, lam, beta)]
    if method != "subgradient":
        raise ValueError(f"unknown method {method!r}")
    if step_scale is None:
        # rough inverse curvature: columns have norm ~1, n rows
        step_scale = 1.0 / max(1.0, np.linalg.norm(X, 2) ** 2)
    beta = np.zeros(p)
    best = beta.copy()
    trace = [composite_l1_objective(instance, loss, lam, beta)]
    best_obj = trace[0]
    for t in range(iters):
        resid = Y - X @ beta
        grad = -X.T @ _loss_subgradient_vec(loss, resid)
        if step_schedule == "diminishing":
            gamma = step_scale / np.sqrt(t + 1.0)
        elif step_schedule == "constant":
            gamma = step_scale
        else:
            gamma = step_schedule(t)
        beta = soft_threshold(beta - gamma * grad, gamma * lam)
        obj = composite_l1_objective(instance, loss, lam, beta)
        trace.append(obj)
        if obj < best_obj:
            best_obj, best = obj, beta.copy()
    return best, trace


def _composite_l1_linprog(X, Y, loss, lam):
    """Exact LP for the composite-quantile l1 problem (HiGHS)."""
    from scipy.optimize import linprog
    from scipy.sparse import csr_matrix, eye, hstack

    n, p = X.shape
    K = loss.K
    u, w, taus = loss.intercepts, loss.weights, loss.taus
    nK = n * K
    # variables: beta+ (p), beta- (p), r+ (nK), r- (nK)
    # constraint per (i,k): X_i (b+ - b-) + r+_{ik} - r-_{ik} = Y_i - u_k
    rhs = [Y - u[k] for k in range(K)]
    XK = csr_matrix(np.vstack([X] * K))
    A_beta = hstack([XK, -XK])
    A_eq = hstack([A_beta, eye(nK, format="csr"), -eye(nK, format="csr")],
                  format="csr")
    b_eq = np.concatenate(rhs)
    cost_rp = np.repeat(w * taus, n)
    cost_rm = np.repeat(w * (1.0 - taus), n)
    c = np.concatenate([np.full(p, lam), np.full(p, lam), cost_rp, cost_rm])
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    x = res.x
    return x[:p] - x[p:2 * p]
