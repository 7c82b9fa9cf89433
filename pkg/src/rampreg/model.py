"""Problem instances: random designs, sparse coefficients, noise, responses.

All generators are pure functions of their arguments plus a seed, so
instances can be replayed bit-for-bit and shared freely across threads.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from .io import (dump_json, load_json, read_matrix_csv, read_vector_csv,
                 write_matrix_csv, write_vector_csv)

KINDS = ("gaussian", "student_t", "gaussian_mixture", "dirac_pm1", "point_mass")


@dataclass(frozen=True)
class DistributionSpec:
    """A samplable scalar distribution, optionally rescaled to a target sd.

    ``target_sd`` applies to *samples* (empirical centering and rescaling,
    see :func:`generate_errors`); ``density``/``quantile`` describe the
    population law after the matching location-scale standardization.
    """

    kind: str
    mean: float = 0.0
    sd: float = 1.0
    df: float = 3.0
    weights: tuple = ()
    means: tuple = ()
    sds: tuple = ()
    value: float = 0.0
    target_sd: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "gaussian_mixture":
            if not (len(self.weights) == len(self.means) == len(self.sds)):
                raise ValueError("mixture weights/means/sds must have equal length")
            if abs(sum(self.weights) - 1.0) > 1e-12:
                raise ValueError("mixture weights must sum to 1")
        if self.target_sd is not None and self.target_sd <= 0:
            raise ValueError("target_sd must be positive")

    # -- population moments ------------------------------------------------
    def pop_mean(self) -> float:
        if self.kind == "gaussian":
            return self.mean
        if self.kind == "student_t":
            return 0.0
        if self.kind == "gaussian_mixture":
            return float(np.dot(self.weights, self.means))
        if self.kind == "dirac_pm1":
            return 0.0
        return self.value

    def pop_sd(self) -> float:
        if self.kind == "gaussian":
            return self.sd
        if self.kind == "student_t":
            if self.df <= 2:
                raise ValueError("student_t sd undefined for df <= 2")
            return float(np.sqrt(self.df / (self.df - 2.0)))
        if self.kind == "gaussian_mixture":
            m = self.pop_mean()
            second = np.dot(self.weights, np.asarray(self.sds) ** 2 + np.asarray(self.means) ** 2)
            return float(np.sqrt(second - m**2))
        if self.kind == "dirac_pm1":
            return 1.0
        return 0.0

    def _loc_scale(self):
        # standardization matching the empirical recipe: x -> (x - mean) * c
        if self.target_sd is None:
            return 0.0, 1.0
        return self.pop_mean(), self.target_sd / self.pop_sd()

    # -- sampling ----------------------------------------------------------
    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Raw i.i.d. draws; any target_sd rescaling is the caller's job."""
        if self.kind == "gaussian":
            return rng.normal(self.mean, self.sd, size)
        if self.kind == "student_t":
            return rng.standard_t(self.df, size)
        if self.kind == "gaussian_mixture":
            comp = rng.choice(len(self.weights), size=size, p=self.weights)
            return rng.normal(np.asarray(self.means)[comp], np.asarray(self.sds)[comp])
        if self.kind == "dirac_pm1":
            return rng.choice([-1.0, 1.0], size=size)
        return np.full(size, self.value, dtype=float)

    # -- population density / cdf / quantile (standardized law) -------------
    def density(self, x) -> np.ndarray:
        loc, c = self._loc_scale()
        x = np.asarray(x, dtype=float)
        z = x / c + loc
        if self.kind == "gaussian":
            d = stats.norm.pdf(z, self.mean, self.sd)
        elif self.kind == "student_t":
            d = stats.t.pdf(z, self.df)
        elif self.kind == "gaussian_mixture":
            d = sum(w * stats.norm.pdf(z, m, s)
                    for w, m, s in zip(self.weights, self.means, self.sds))
        else:
            raise ValueError(f"{self.kind} has no density")
        return d / c

    def cdf(self, x) -> np.ndarray:
        loc, c = self._loc_scale()
        x = np.asarray(x, dtype=float)
        z = x / c + loc
        if self.kind == "gaussian":
            return stats.norm.cdf(z, self.mean, self.sd)
        if self.kind == "student_t":
            return stats.t.cdf(z, self.df)
        if self.kind == "gaussian_mixture":
            return sum(w * stats.norm.cdf(z, m, s)
                       for w, m, s in zip(self.weights, self.means, self.sds))
        raise ValueError(f"{self.kind} has no continuous cdf")

    def quantile(self, q: float) -> float:
        loc, c = self._loc_scale()
        if self.kind == "gaussian":
            raw = stats.norm.ppf(q, self.mean, self.sd)
        elif self.kind == "student_t":
            raw = stats.t.ppf(q, self.df)
        elif self.kind == "gaussian_mixture":
            lo = min(m - 10 * s for m, s in zip(self.means, self.sds))
            hi = max(m + 10 * s for m, s in zip(self.means, self.sds))
            spec = DistributionSpec(kind=self.kind, weights=self.weights,
                                    means=self.means, sds=self.sds)
            raw = brentq(lambda x: spec.cdf(x) - q, lo, hi, xtol=1e-13)
        else:
            raise ValueError(f"{self.kind} has no continuous quantile function")
        return float((raw - loc) * c)

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "gaussian":
            d.update(mean=self.mean, sd=self.sd)
        elif self.kind == "student_t":
            d.update(df=self.df)
        elif self.kind == "gaussian_mixture":
            d.update(weights=list(self.weights), means=list(self.means), sds=list(self.sds))
        elif self.kind == "point_mass":
            d.update(value=self.value)
        if self.target_sd is not None:
            d["target_sd"] = self.target_sd
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        d = dict(d)
        for key in ("weights", "means", "sds"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class DesignSpec:
    """Random design of size n x p with Toeplitz base correlation sigma_x."""

    n: int
    p: int
    sigma_x: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if not 0.0 <= self.sigma_x < 1.0:
            raise ValueError("sigma_x must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {"n": self.n, "p": self.p, "sigma_x": self.sigma_x, "seed": self.seed}


@dataclass(frozen=True)
class ProblemInstance:
    """A linear-model dataset Y = X beta + eps with optional ground truth."""

    X: np.ndarray
    Y: np.ndarray
    beta_true: np.ndarray | None = None
    eps: np.ndarray | None = None
    s_hint: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def delta(self) -> float:
        return self.n / self.p


def generate_design(spec: DesignSpec) -> np.ndarray:
    """Draw the design matrix.

    sigma_x = 0 gives i.i.d. N(0, 1/n) entries.  Otherwise rows are drawn
    from N(0, Sigma_X) with (Sigma_X)_{ij} = sigma_x^|i-j| (exact AR(1)
    recursion), then every column is centered and rescaled to sample
    variance 1/n.
    """
    rng = np.random.default_rng(spec.seed)
    n, p, r = spec.n, spec.p, spec.sigma_x
    if r == 0.0:
        return rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, p))
    xi = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = xi[:, 0]
    scale = np.sqrt(1.0 - r * r)
    for j in range(1, p):
        X[:, j] = r * X[:, j - 1] + scale * xi[:, j]
    X -= X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    X /= sd * np.sqrt(n)
    return X


def generate_coefficients(p: int, s: int, dist: DistributionSpec, seed) -> np.ndarray:
    """Exactly s nonzero entries at seeded uniform positions, i.i.d. from dist."""
    if not 0 <= s <= p:
        raise ValueError(f"sparsity s={s} must satisfy 0 <= s <= p={p}")
    rng = np.random.default_rng(seed)
    beta = np.zeros(p)
    support = rng.permutation(p)[:s]
    beta[support] = dist.sample(s, rng)
    return beta


def generate_errors(n: int, dist: DistributionSpec, seed) -> np.ndarray:
    """Draw an error vector, centered and rescaled when dist.target_sd is set."""
    rng = np.random.default_rng(seed)
    eps = dist.sample(n, rng)
    if dist.target_sd is None:
        return eps
    if n < 2:
        raise ValueError("rescaling to a target sd needs n >= 2")
    eps = eps - eps.mean()
    sd = eps.std(ddof=1)
    if sd == 0.0:
        warnings.warn("degenerate error sample (sd = 0); rescale step skipped")
        return eps
    return eps * (dist.target_sd / sd)


def assemble_instance(X, beta, eps, meta=None) -> ProblemInstance:
    """Form Y = X beta + eps and record the ground truth."""
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if X.shape[1] != beta.shape[0] or X.shape[0] != eps.shape[0]:
        raise ValueError(
            f"shape mismatch: X {X.shape}, beta {beta.shape}, eps {eps.shape}")
    Y = X @ beta + eps
    return ProblemInstance(X=X, Y=Y, beta_true=beta, eps=eps,
                           s_hint=int(np.count_nonzero(beta)), meta=dict(meta or {}))


def simulate_instance(design: DesignSpec, s: int, coef_dist: DistributionSpec,
                      error_dist: DistributionSpec, seed=None) -> ProblemInstance:
    """One-stop data generator with independent substreams per object.

    The master seed is split so that e.g. changing the error seed leaves the
    design and coefficients untouched.  When ``seed`` is None the design
    spec's own seed is used as the master.
    """
    master = design.seed if seed is None else seed
    ss = np.random.SeedSequence(master).spawn(3)
    X = generate_design(DesignSpec(design.n, design.p, design.sigma_x, seed=ss[0]))
    beta = generate_coefficients(design.p, s, coef_dist, ss[1])
    eps = generate_errors(design.n, error_dist, ss[2])
    meta = {"design": design.to_dict(), "s": s,
            "seed": master if isinstance(master, int) else str(master),
            "coef_dist": coef_dist.to_dict(), "error_dist": error_dist.to_dict()}
    return assemble_instance(X, beta, eps, meta=meta)


def save_instance(instance: ProblemInstance, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "X.csv", instance.X)
    write_vector_csv(out / "Y.csv", instance.Y)
    if instance.beta_true is not None:
        write_vector_csv(out / "beta_true.csv", instance.beta_true)
    if instance.eps is not None:
        write_vector_csv(out / "eps.csv", instance.eps)
    manifest = {"n": instance.n, "p": instance.p, "delta": instance.delta,
                "s_hint": instance.s_hint, **instance.meta}
    dump_json(out / "instance.json", manifest)


def load_instance(indir) -> ProblemInstance:
    ind = Path(indir)
    X = read_matrix_csv(ind / "X.csv")
    Y = read_vector_csv(ind / "Y.csv")
    manifest = load_json(ind / "instance.json")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y row counts disagree")
    if X.shape[0] != manifest["n"] or X.shape[1] != manifest["p"]:
        raise ValueError("CSV shapes disagree with the manifest")
    beta = eps = None
    if (ind / "beta_true.csv").exists():
        beta = read_vector_csv(ind / "beta_true.csv")
    if (ind / "eps.csv").exists():
        eps = read_vector_csv(ind / "eps.csv")
    meta = {k: v for k, v in manifest.items()
            if k not in ("n", "p", "delta", "s_hint")}
    return ProblemInstance(X=X, Y=Y, beta_true=beta, eps=eps,
                           s_hint=manifest.get("s_hint"), meta=meta)
