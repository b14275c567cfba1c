"""Generative model: features, symmetric parameters, affinities, edge sampling.

Conventions used throughout the package:

* features are stored column-wise, ``X.entries[:, i]`` is the vector of
  vertex ``i``;
* observed pairs are unordered, stored as ``(i, j)`` with ``i < j``, sorted
  lexicographically; loops are rejected;
* parameter matrices are exactly symmetric by construction (assembled from
  an upper-triangular store, never symmetrized after the fact).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "FeatureMatrix",
    "ParameterMatrix",
    "ObservationMask",
    "AffinityMatrix",
    "EdgeObservations",
    "sigmoid",
    "log_sigmoid",
    "softplus",
    "logit",
    "rank_cutoff",
    "build_parameter",
    "affinity",
    "edge_probabilities",
    "sample_observations",
]


class DimensionMismatchError(ValueError):
    """Shapes of features, parameters and masks do not agree."""


def sigmoid(t):
    """Numerically stable logistic function 1 / (1 + exp(-t)).

    Works on scalars and arrays; never overflows for large ``|t|`` and
    satisfies sigmoid(t) + sigmoid(-t) == 1 exactly in floating point
    (both branches share the same exp(-|t|)).
    """
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("sigmoid requires finite input")
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    if out.ndim == 0:
        return float(out)
    return out


def softplus(t):
    """log(1 + exp(t)) evaluated in the overflow-free branch."""
    return np.logaddexp(0.0, t)


def log_sigmoid(t):
    """log(sigmoid(t)) = -softplus(-t), stable for large ``|t|``."""
    return -np.logaddexp(0.0, -np.asarray(t, dtype=float))


def logit(q):
    """Inverse of ``sigmoid`` on (0, 1)."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0.0) or np.any(q >= 1.0):
        raise ValueError("logit requires arguments in (0, 1)")
    out = np.log(q) - np.log1p(-q)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass
class FeatureMatrix:
    """Explanatory variables, one column per vertex.

    Attributes
    ----------
    entries : (d, n) array
        Column ``i`` is the feature vector of vertex ``i``.
    """

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2:
            raise ValueError("feature matrix must be two-dimensional")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("feature entries must be finite")
        d, n = self.entries.shape
        if d < 1 or n < 2:
            raise ValueError("need d >= 1 features and n >= 2 vertices")

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    def column(self, i: int) -> np.ndarray:
        return self.entries[:, i]


# Relative singular-value cutoff for numerical rank: d * smax * 2**-40.
RANK_CUTOFF_SCALE = 2.0 ** -40


def rank_cutoff(d: int, smax: float) -> float:
    return d * smax * RANK_CUTOFF_SCALE


def _numerical_rank(entries: np.ndarray) -> int:
    s = np.linalg.svd(entries, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_cutoff(entries.shape[0], float(s[0]))))


@dataclass
class ParameterMatrix:
    """Symmetric d x d parameter with tracked support, rank and l11 budget.

    ``support`` is the set of rows carrying a nonzero entry; for a symmetric
    matrix, the number of nonzero rows equals the side length of the active
    block.  ``rank`` counts singular values above ``rank_cutoff``;
    constructions with known exact rank may carry it in ``analytic_rank``.
    """

    entries: np.ndarray
    support: frozenset = field(init=False)
    rank: int = field(init=False)
    l11_norm: float = field(init=False)
    analytic_rank: int | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError("parameter matrix must be square")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("parameter entries must be finite")
        if not np.array_equal(self.entries, self.entries.T):
            raise ValueError("parameter matrix must be exactly symmetric; "
                             "build it from an upper-triangular store")
        nz_rows = np.flatnonzero(np.any(self.entries != 0.0, axis=1))
        self.support = frozenset(int(i) for i in nz_rows)
        self.rank = _numerical_rank(self.entries)
        self.l11_norm = float(np.sum(np.abs(self.entries)))

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def block_sparsity(self) -> int:
        """Number of nonzero rows (= side length of the active block)."""
        return len(self.support)

    def in_class(self, k: int, r: int, m_budget: float) -> bool:
        """Membership in the class {l11 < m_budget, block size <= k, rank <= r}."""
        return (self.l11_norm < m_budget
                and self.block_sparsity <= k
                and self.rank <= r)

    @classmethod
    def zeros(cls, d: int) -> "ParameterMatrix":
        return cls(np.zeros((d, d)), analytic_rank=0)


def build_parameter(d: int,
                    upper_entries: Mapping[tuple, float],
                    m_budget: float,
                    strict: bool = False) -> ParameterMatrix:
    """Assemble a symmetric parameter from upper-triangular entries.

    Parameters
    ----------
    upper_entries : mapping (i, j) -> value with i <= j
        Entries of the upper triangle; the lower triangle is mirrored.
    m_budget : float
        The l11 budget the matrix is measured against.
    strict : bool
        When set, reject matrices whose l11 norm is not strictly below
        ``m_budget``.
    """
    if m_budget <= 0:
        raise ValueError("m_budget must be positive")
    entries = np.zeros((d, d))
    for (i, j), value in upper_entries.items():
        if not (0 <= i <= j < d):
            raise ValueError(f"index ({i}, {j}) outside the upper triangle of [0, {d})")
        if not np.isfinite(value):
            raise ValueError(f"entry ({i}, {j}) is not finite")
        entries[i, j] = value
        entries[j, i] = value
    theta = ParameterMatrix(entries)
    if strict and theta.l11_norm >= m_budget:
        raise ValueError(
            f"l11 norm {theta.l11_norm} is not strictly below the budget {m_budget}")
    return theta


@dataclass
class ObservationMask:
    """Set of observed unordered vertex pairs.

    ``pairs`` is an (N, 2) integer array with ``i < j`` in every row, sorted
    lexicographically and free of duplicates.
    """

    n: int
    pairs: np.ndarray

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if self.n < 2:
            raise ValueError("need at least two vertices")
        if self.pairs.size:
            i, j = self.pairs[:, 0], self.pairs[:, 1]
            if np.any(i >= j):
                raise ValueError("pairs must satisfy i < j (loops are rejected)")
            if np.any(i < 0) or np.any(j >= self.n):
                raise ValueError("pair index outside [0, n)")
            order = np.lexsort((j, i))
            if not np.array_equal(order, np.arange(len(self.pairs))):
                raise ValueError("pairs must be sorted lexicographically")
            keys = i * self.n + j
            if len(np.unique(keys)) != len(keys):
                raise ValueError("duplicate pairs are rejected")

    @property
    def size(self) -> int:
        """Effective sample size N = number of observed pairs."""
        return len(self.pairs)

    @classmethod
    def from_pairs(cls, n: int, pairs) -> "ObservationMask":
        arr = np.asarray(sorted(set((int(i), int(j)) for i, j in pairs)),
                         dtype=np.int64).reshape(-1, 2)
        return cls(n=n, pairs=arr)

    @classmethod
    def all_pairs(cls, n: int) -> "ObservationMask":
        arr = np.asarray(list(combinations(range(n), 2)), dtype=np.int64)
        return cls(n=n, pairs=arr)


@dataclass
class AffinityMatrix:
    """Bilinear scores X_i' Theta X_j for the observed pairs, in pair order."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("affinities must be finite")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class EdgeObservations:
    """Binary edge labels indexed parallel to an observation mask."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        self.labels = self.labels.astype(np.int8)

    def __len__(self) -> int:
        return len(self.labels)


def _check_shapes(X: FeatureMatrix, theta: ParameterMatrix, omega: ObservationMask):
    if theta.d != X.d:
        raise DimensionMismatchError(
            f"parameter dimension {theta.d} != feature dimension {X.d}")
    if omega.n != X.n:
        raise DimensionMismatchError(
            f"mask vertex count {omega.n} != feature vertex count {X.n}")


def affinity(X: FeatureMatrix, theta: ParameterMatrix,
             omega: ObservationMask) -> AffinityMatrix:
    """Affinities X_i' Theta X_j for every observed pair, in pair order."""
    _check_shapes(X, theta, omega)
    proj = theta.entries @ X.entries          # (d, n)
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    vals = np.einsum("dt,dt->t", X.entries[:, ii], proj[:, jj])
    return AffinityMatrix(vals)


def edge_probabilities(affinities: AffinityMatrix) -> np.ndarray:
    """Elementwise sigmoid of the affinities; values in (0, 1)."""
    return sigmoid(affinities.values)


def sample_observations(probabilities, seed: int) -> EdgeObservations:
    """Independent Bernoulli edge labels, reproducible from the seed.

    Uses a counter-based generator so that label ``t`` is a pure function of
    ``(seed, t)``: the same seed gives bit-identical labels, and disjoint
    index ranges can be evaluated concurrently.
    """
    p = np.asarray(probabilities, dtype=float).reshape(-1)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    u = np.random.Generator(np.random.Philox(key=seed)).random(len(p))
    return EdgeObservations((u < p).astype(np.int8))
