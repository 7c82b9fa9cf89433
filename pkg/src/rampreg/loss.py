"""Composite quantile (and squared) loss: value, subgradient, prox, scores.

A composite quantile loss is a weighted sum of K check losses with common
slope and distinct intercepts.  All piecewise structure is driven by the
cumulative weight table h(0..K); band lookup is a binary search over the
2K breakpoints u_l + b*h(l-1), u_l + b*h(l), so every evaluation is
O(log K) per point inside hot loops.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm


def cumulative_weights(taus, weights) -> np.ndarray:
    """h(l) = sum_{k<=l} w_k tau_k - sum_{k>l} w_k (1 - tau_k), l = 0..K."""
    taus = np.asarray(taus, dtype=float)
    w = np.asarray(weights, dtype=float)
    head = np.concatenate([[0.0], np.cumsum(w * taus)])
    tail_full = np.concatenate([[0.0], np.cumsum((w * (1.0 - taus))[::-1])])[::-1]
    return head - tail_full


@dataclass(frozen=True)
class CompositeQuantileLoss:
    """Weighted sum of quantile check losses at levels taus with intercepts.

    Attributes
    ----------
    taus, intercepts, weights : K-vectors; taus and intercepts strictly
        increasing, weights nonnegative and summing to 1.
    h : (K+1)-vector of cumulative weights, computed on construction.
    """

    taus: np.ndarray
    intercepts: np.ndarray
    weights: np.ndarray
    h: np.ndarray = field(init=False)

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        u = np.asarray(self.intercepts, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if not (taus.shape == u.shape == w.shape) or taus.ndim != 1 or taus.size == 0:
            raise ValueError("taus, intercepts, weights must be equal-length 1-d vectors")
        if np.any(taus <= 0) or np.any(taus >= 1) or np.any(np.diff(taus) <= 0):
            raise ValueError("quantile levels must be strictly increasing in (0, 1)")
        if np.any(np.diff(u) <= 0):
            raise ValueError("intercepts must be strictly increasing")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "intercepts", u)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "h", cumulative_weights(taus, w))

    @property
    def K(self) -> int:
        return self.taus.size

    # -- band lookup ---------------------------------------------------------
    def _regions(self, z, b):
        """Region index in 0..2K: even -> open band l = r/2, odd -> flat at u_{(r+1)/2}."""
        u, h = self.intercepts, self.h
        breaks = np.empty(2 * self.K)
        breaks[0::2] = u + b * h[:-1]
        breaks[1::2] = u + b * h[1:]
        return np.searchsorted(breaks, z, side="right")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        u, w, taus = self.intercepts, self.weights, self.taus
        el = np.searchsorted(u, x, side="right")
        head_x = np.concatenate([[0.0], np.cumsum(w * taus)])
        head_c = np.concatenate([[0.0], np.cumsum(w * taus * u)])
        tail_x = np.concatenate([[0.0], np.cumsum((w * (1 - taus))[::-1])])[::-1]
        tail_c = np.concatenate([[0.0], np.cumsum((w * (1 - taus) * u)[::-1])])[::-1]
        return head_x[el] * x - head_c[el] + tail_c[el] - tail_x[el] * x

    def subgradient(self, x: float) -> tuple:
        """Subdifferential [lo, hi] at a scalar point."""
        u, h = self.intercepts, self.h
        el = int(np.searchsorted(u, x, side="right"))
        if el >= 1 and x == u[el - 1]:
            return (float(h[el - 1]), float(h[el]))
        return (float(h[el]), float(h[el]))

    def prox(self, z, b: float):
        """argmin_x { b*rho(x) + (x - z)^2 / 2 } via the closed-form bands."""
        if b <= 0:
            raise ValueError("prox scale b must be positive")
        z = np.asarray(z, dtype=float)
        r = self._regions(z, b)
        flat = (r % 2) == 1
        out = z - b * self.h[r // 2]
        u_idx = np.where(flat, (r + 1) // 2 - 1, 0)
        return np.where(flat, self.intercepts[u_idx], out)

    def effective_score(self, z, b: float):
        """b times the subgradient at the proximal point; equals z - prox(z, b)."""
        if b <= 0:
            raise ValueError("effective score scale b must be positive")
        z = np.asarray(z, dtype=float)
        r = self._regions(z, b)
        flat = (r % 2) == 1
        out = b * self.h[r // 2]
        u_idx = np.where(flat, (r + 1) // 2 - 1, 0)
        return np.where(flat, z - self.intercepts[u_idx], out)

    def score_slope(self, z, b: float):
        """A.e. derivative of the effective score in z: 1 on flat bands, else 0."""
        z = np.asarray(z, dtype=float)
        return ((self._regions(z, b) % 2) == 1).astype(float)

    def score_bound(self, b: float) -> float:
        """sup_z |effective_score(z; b)| = b * max(|h(0)|, h(K))."""
        return b * max(abs(self.h[0]), abs(self.h[-1]))

    def smoothed_effective_score(self, z, b: float, bandwidth: float):
        """Effective score mollified by a Gaussian kernel of scale bandwidth.

        The exact score is piecewise linear with unit slope on the flat
        bands, so it decomposes into ramps at the band edges; convolving a
        ramp with N(0, h^2) has the closed form x Phi(x/h) + h phi(x/h).
        bandwidth -> 0 recovers the exact score.
        """
        if b <= 0:
            raise ValueError("effective score scale b must be positive")
        if bandwidth <= 0:
            return self.effective_score(z, b)
        z = np.asarray(z, dtype=float)
        u, h = self.intercepts, self.h
        lo = u + b * h[:-1]
        hi = u + b * h[1:]
        out = np.full_like(z, b * h[0], dtype=float)
        for k in range(self.K):
            for edge, sign in ((lo[k], 1.0), (hi[k], -1.0)):
                x = z - edge
                t = x / bandwidth
                out += sign * (x * norm.cdf(t) + bandwidth * norm.pdf(t))
        return out

    def smoothed_score_slope(self, z, b: float, bandwidth: float):
        """Derivative in z of the smoothed effective score (smoothed band mass)."""
        if bandwidth <= 0:
            return self.score_slope(z, b)
        z = np.asarray(z, dtype=float)
        u, h = self.intercepts, self.h
        lo = u + b * h[:-1]
        hi = u + b * h[1:]
        out = np.zeros_like(z, dtype=float)
        for k in range(self.K):
            out += norm.cdf((z - lo[k]) / bandwidth) - norm.cdf((z - hi[k]) / bandwidth)
        return out

    def to_dict(self) -> dict:
        return {"taus": self.taus.tolist(), "weights": self.weights.tolist(),
                "intercepts": self.intercepts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CompositeQuantileLoss":
        return cls(taus=np.asarray(d["taus"]), intercepts=np.asarray(d["intercepts"]),
                   weights=np.asarray(d["weights"]))


@dataclass(frozen=True)
class SquaredLoss:
    """rho(x) = x^2 / 2; the Lasso / least-squares member of the family."""

    def value(self, x):
        return 0.5 * np.asarray(x, dtype=float) ** 2

    def subgradient(self, x: float) -> tuple:
        return (float(x), float(x))

    def prox(self, z, b: float):
        if b <= 0:
            raise ValueError("prox scale b must be positive")
        return np.asarray(z, dtype=float) / (1.0 + b)

    def effective_score(self, z, b: float):
        if b <= 0:
            raise ValueError("effective score scale b must be positive")
        return np.asarray(z, dtype=float) * (b / (1.0 + b))

    def score_slope(self, z, b: float):
        return np.full_like(np.asarray(z, dtype=float), b / (1.0 + b))

    def smoothed_effective_score(self, z, b: float, bandwidth: float):
        # the score is globally linear, so Gaussian mollification is a no-op
        return self.effective_score(z, b)

    def smoothed_score_slope(self, z, b: float, bandwidth: float):
        return self.score_slope(z, b)

    def to_dict(self) -> dict:
        return {"kind": "squared"}


def single_quantile_loss(tau: float, intercept: float = 0.0) -> CompositeQuantileLoss:
    """The classical tau-check loss as the K = 1 member of the family."""
    return CompositeQuantileLoss(taus=np.array([tau]),
                                 intercepts=np.array([intercept]),
                                 weights=np.array([1.0]))


def rescaled_score(loss, z, b: float, delta: float, omega: float):
    """Sparsity-adjusted score (delta/omega) * effective_score(z; b)."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    if delta <= 0:
        raise ValueError("delta must be positive")
    return (delta / omega) * loss.effective_score(z, b)


def loss_from_dict(d: dict):
    if d.get("kind") == "squared":
        return SquaredLoss()
    return CompositeQuantileLoss.from_dict(d)
