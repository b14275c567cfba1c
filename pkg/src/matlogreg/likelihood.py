"""Exact log-likelihood, gradient, KL divergence and noise-term geometry.

All functions accept either ``EdgeObservations`` (binary production labels)
or a raw float array in [0, 1].  The fractional form is a test-only mode: it
lets expectation identities (zero gradient at the truth, zero noise matrix)
be asserted exactly by substituting labels with their means.

Scalar reductions sum in pair-index order so repeated runs are
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import curvature_floor, masked_quadratic_norm_sq
from .model import (
    DimensionMismatchError,
    EdgeObservations,
    FeatureMatrix,
    ObservationMask,
    ParameterMatrix,
    affinity,
    log_sigmoid,
    sigmoid,
)

__all__ = [
    "BERNOULLI_SUBGAUSSIAN_VAR",
    "AffinityBoundError",
    "LikelihoodReport",
    "NoiseMatrix",
    "SandwichResult",
    "log_likelihood",
    "expected_log_likelihood",
    "gradient",
    "kl_divergence",
    "bernoulli_kl",
    "kl_curvature_sandwich",
    "noise_gradient",
    "likelihood_report",
]

# Variance proxy of a centered Bernoulli variable; unrelated to the sigmoid
# despite the customary sigma notation for both.
BERNOULLI_SUBGAUSSIAN_VAR = 0.25


class AffinityBoundError(ValueError):
    """An affinity exceeded the identifiability bound (model-class breach,
    not a numerical failure)."""


def _labels(Y) -> np.ndarray:
    if isinstance(Y, EdgeObservations):
        return Y.labels.astype(float)
    arr = np.asarray(Y, dtype=float).reshape(-1)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("fractional labels must lie in [0, 1]")
    return arr


def _check(Y, X: FeatureMatrix, omega: ObservationMask) -> np.ndarray:
    y = _labels(Y)
    if len(y) != omega.size:
        raise DimensionMismatchError(
            f"{len(y)} labels for {omega.size} observed pairs")
    return y


def log_likelihood(Y, X: FeatureMatrix, theta: ParameterMatrix,
                   omega: ObservationMask) -> float:
    """Bernoulli log-likelihood of the observed edges.

    Each pair contributes y * log(p) + (1 - y) * log(1 - p) with
    p = sigmoid(X_i' Theta X_j); the log terms are evaluated through the
    stable softplus branch, so large affinities do not overflow.  Always
    nonpositive.
    """
    y = _check(Y, X, omega)
    a = affinity(X, theta, omega).values
    return float(np.sum(y * log_sigmoid(a) + (1.0 - y) * log_sigmoid(-a)))


def expected_log_likelihood(theta_star: ParameterMatrix, theta: ParameterMatrix,
                            X: FeatureMatrix, omega: ObservationMask) -> float:
    """Expectation of ``log_likelihood`` under labels drawn at ``theta_star``."""
    p = sigmoid(affinity(X, theta_star, omega).values)
    a = affinity(X, theta, omega).values
    return float(np.sum(p * log_sigmoid(a) + (1.0 - p) * log_sigmoid(-a)))


def gradient(Y, X: FeatureMatrix, theta: ParameterMatrix,
             omega: ObservationMask) -> np.ndarray:
    """Gradient of the log-likelihood over the space of symmetric matrices.

    Returns sum over pairs of (y - sigmoid(affinity)) times the symmetrized
    outer product (X_j X_i' + X_i X_j') / 2, the Frobenius representer of the
    derivative restricted to symmetric directions.  With labels replaced by
    their expectation at ``theta`` the result is the zero matrix.
    """
    y = _check(Y, X, omega)
    a = affinity(X, theta, omega).values
    resid = y - sigmoid(a)
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    Xi, Xj = X.entries[:, ii], X.entries[:, jj]
    half = (Xi * resid) @ Xj.T
    return 0.5 * (half + half.T)


def bernoulli_kl(p, q) -> np.ndarray:
    """KL divergence between Bernoulli(p) and Bernoulli(q), elementwise."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.zeros(np.broadcast(p, q).shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(p > 0.0, p * (np.log(p) - np.log(q)), 0.0)
        t2 = np.where(p < 1.0, (1.0 - p) * (np.log1p(-p) - np.log1p(-q)), 0.0)
    out = t1 + t2
    if out.ndim == 0:
        return float(out)
    return out


def kl_divergence(theta_star: ParameterMatrix, theta: ParameterMatrix,
                  X: FeatureMatrix, omega: ObservationMask) -> float:
    """KL divergence between the edge distributions at two parameters.

    Sum over observed pairs of the Bernoulli divergences; nonnegative, and
    zero exactly when the two affinities agree on every observed pair.  The
    log-ratios are computed through log-sigmoid differences, which stays
    accurate when probabilities approach 0 or 1.
    """
    a_star = affinity(X, theta_star, omega).values
    a = affinity(X, theta, omega).values
    p = sigmoid(a_star)
    terms = (p * (log_sigmoid(a_star) - log_sigmoid(a))
             + (1.0 - p) * (log_sigmoid(-a_star) - log_sigmoid(-a)))
    return float(np.sum(terms))


@dataclass
class SandwichResult:
    lower_ok: bool
    upper_ok: bool
    slack_lower: float
    slack_upper: float
    kl: float
    quad: float


def kl_curvature_sandwich(theta_star: ParameterMatrix, theta: ParameterMatrix,
                          X: FeatureMatrix, omega: ObservationMask,
                          m_budget: float,
                          tol: float = 1e-12) -> SandwichResult:
    """Two-sided curvature bound on the KL divergence.

    Checks  floor/2 * Q  <=  KL  <=  Q / 8,  where Q is the squared masked
    seminorm of X' (theta_star - theta) X and the floor is the smallest
    logistic slope over affinities bounded by ``m_budget``.  Requires both
    parameters to keep all observed affinities strictly inside the bound;
    violations raise ``AffinityBoundError``.
    """
    for name, th in (("theta_star", theta_star), ("theta", theta)):
        vals = affinity(X, th, omega).values
        worst = float(np.max(np.abs(vals))) if len(vals) else 0.0
        if worst >= m_budget:
            raise AffinityBoundError(
                f"{name} attains affinity magnitude {worst} >= bound {m_budget}")
    kl = kl_divergence(theta_star, theta, X, omega)
    quad = masked_quadratic_norm_sq(
        X, theta_star.entries - theta.entries, omega)
    floor = curvature_floor(m_budget)
    lo = 0.5 * floor * quad
    hi = 0.125 * quad
    scale = max(1.0, abs(kl), abs(quad))
    return SandwichResult(
        lower_ok=bool(kl >= lo - tol * scale),
        upper_ok=bool(kl <= hi + tol * scale),
        slack_lower=kl - lo,
        slack_upper=hi - kl,
        kl=kl,
        quad=quad,
    )


@dataclass
class NoiseMatrix:
    """Centered label noise y - p arranged as an upper-triangular n x n array,
    zero off the observed pairs."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)


def noise_gradient(Y, X: FeatureMatrix, theta_star: ParameterMatrix,
                   omega: ObservationMask) -> tuple:
    """Noise matrix and the gradient of the stochastic likelihood component.

    Returns ``(noise, grad)`` with ``grad = X noise X'`` (a d x d array, not
    symmetric in general).  For any symmetric B, the Frobenius inner product
    of ``grad`` with B equals the masked inner product of the noise entries
    with X' B X.
    """
    y = _check(Y, X, omega)
    p = sigmoid(affinity(X, theta_star, omega).values)
    eps = y - p
    E = np.zeros((X.n, X.n))
    E[omega.pairs[:, 0], omega.pairs[:, 1]] = eps
    grad = X.entries @ E @ X.entries.T
    return NoiseMatrix(E), grad


@dataclass
class LikelihoodReport:
    loglik: float
    gradient: np.ndarray
    per_pair_probs: np.ndarray


def likelihood_report(Y, X: FeatureMatrix, theta: ParameterMatrix,
                      omega: ObservationMask) -> LikelihoodReport:
    """Log-likelihood, symmetric gradient, and per-pair fitted probabilities."""
    probs = sigmoid(affinity(X, theta, omega).values)
    return LikelihoodReport(
        loglik=log_likelihood(Y, X, theta, omega),
        gradient=gradient(Y, X, theta, omega),
        per_pair_probs=probs,
    )
