"""Design conditioning: block isometry and restricted isometry constants.

The map ``B -> (X_i' B X_j)`` over observed pairs is the linear operator the
estimation theory conditions on.  This module materializes it row-wise
(``DesignRows``), measures its restricted extremal singular values over
block-sparse symmetric matrices (``block_isometry_constant``) and over sparse
vectors (``rip_constant``), and provides the affinity-bound check that
guarantees identifiability over an l11 ball.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .model import (
    DimensionMismatchError,
    FeatureMatrix,
    ObservationMask,
    ParameterMatrix,
    sigmoid,
)

__all__ = [
    "BudgetExceededError",
    "DesignRows",
    "IsometryReport",
    "curvature_floor",
    "masked_quadratic_form",
    "masked_quadratic_norm_sq",
    "masked_frobenius_inner",
    "masked_frobenius_norm",
    "build_design_rows",
    "block_isometry_constant",
    "block_rip_constant",
    "rip_constant",
    "check_affinity_bound",
    "affinity_bound_holds",
]

EXACT_SUPPORT_BUDGET = 10 ** 5


class BudgetExceededError(RuntimeError):
    """An exhaustive enumeration would exceed its support/model budget."""

    def __init__(self, message: str, count: int):
        super().__init__(message)
        self.count = count


def curvature_floor(bound: float) -> float:
    """Smallest slope of the logistic link over affinities bounded by ``bound``.

    Equals sigmoid(bound) * (1 - sigmoid(bound)); decreasing in the bound,
    with value 1/4 at zero.
    """
    if bound < 0:
        raise ValueError("bound must be nonnegative")
    s = sigmoid(bound)
    return s * (1.0 - s)


def masked_quadratic_form(X: FeatureMatrix, B: np.ndarray,
                          omega: ObservationMask) -> np.ndarray:
    """Values X_i' B X_j over the observed pairs, for an arbitrary matrix B."""
    proj = np.asarray(B, dtype=float) @ X.entries
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    return np.einsum("dt,dt->t", X.entries[:, ii], proj[:, jj])


def masked_quadratic_norm_sq(X: FeatureMatrix, B: np.ndarray,
                             omega: ObservationMask) -> float:
    """Squared masked Frobenius seminorm of X' B X, i.e. sum over pairs of
    (X_i' B X_j)^2."""
    v = masked_quadratic_form(X, B, omega)
    return float(v @ v)


def masked_frobenius_inner(B1: np.ndarray, B2: np.ndarray,
                           omega: ObservationMask) -> float:
    """Inner product of two n x n matrices restricted to the observed pairs."""
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    return float(np.sum(np.asarray(B1)[ii, jj] * np.asarray(B2)[ii, jj]))


def masked_frobenius_norm(B: np.ndarray, omega: ObservationMask) -> float:
    """Seminorm sqrt(sum over observed pairs of B_ij^2)."""
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    v = np.asarray(B)[ii, jj]
    return float(np.sqrt(v @ v))


@dataclass
class DesignRows:
    """Vectorized design: row t is vec(X_j X_i') for the t-th observed pair.

    ``vec`` is column-major (Fortran order), fixed so that the two
    computation routes to the isometry constants are structurally comparable.
    """

    rows: np.ndarray
    d: int

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[1] != self.d * self.d:
            raise ValueError("rows must have d*d columns")

    @property
    def size(self) -> int:
        return self.rows.shape[0]


def build_design_rows(X: FeatureMatrix, omega: ObservationMask) -> DesignRows:
    """Materialize the N x d^2 design whose row t is vec(X_j X_i')."""
    if omega.n != X.n:
        raise DimensionMismatchError(
            f"mask vertex count {omega.n} != feature vertex count {X.n}")
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    # vec(X_j X_i') in column-major order: entry (u, v) sits at v * d + u.
    outer = X.entries[:, jj].T[:, None, :] * X.entries[:, ii].T[:, :, None]
    # outer[t, v, u] = X[u, j_t] * X[v, i_t] = (X_j X_i')[u, v]; the (v, u)
    # axis layout makes a plain reshape produce the column-major vec.
    rows = outer.reshape(len(ii), X.d * X.d)
    return DesignRows(rows=rows, d=X.d)


def _sym_basis(support) -> list:
    """Orthonormal (Frobenius) basis of symmetric matrices on a support."""
    support = sorted(support)
    basis = []
    for a in support:
        basis.append((a, a, 1.0))
    for a, b in combinations(support, 2):
        basis.append((a, b, 1.0 / np.sqrt(2.0)))
    return basis


def _affinity_columns(X: FeatureMatrix, omega: ObservationMask, basis) -> np.ndarray:
    """Columns (X_i' B_m X_j)_t for each basis element, computed via X."""
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    cols = np.empty((len(ii), len(basis)))
    for m, (a, b, w) in enumerate(basis):
        if a == b:
            cols[:, m] = w * X.entries[a, ii] * X.entries[a, jj]
        else:
            cols[:, m] = w * (X.entries[a, ii] * X.entries[b, jj]
                              + X.entries[b, ii] * X.entries[a, jj])
    return cols


def _vec_columns(D: DesignRows, basis) -> np.ndarray:
    """Columns D vec(B_m) for each basis element, computed via the design rows."""
    d = D.d
    cols = np.empty((D.size, len(basis)))
    for m, (a, b, w) in enumerate(basis):
        if a == b:
            cols[:, m] = w * D.rows[:, a * d + a]
        else:
            cols[:, m] = w * (D.rows[:, b * d + a] + D.rows[:, a * d + b])
    return cols


def _gram_extremes(cols: np.ndarray) -> tuple:
    w = np.linalg.eigvalsh(cols.T @ cols)
    return float(w[0]), float(w[-1])


@dataclass
class IsometryReport:
    """Measured block isometry constant for block size ``s``.

    In exact mode every support is enumerated; in monte_carlo mode the value
    is a certified lower bound on the constant (each sampled support yields
    its exact contribution to the max).  Degenerate designs can produce
    values >= 1 (the restricted map annihilates some direction); these are
    reported unclamped with ``degenerate`` set rather than rejected.
    """

    s: int
    delta: float
    mode: str
    supports_checked: int
    worst_support: tuple
    lambda_min: float
    lambda_max: float
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "delta": self.delta,
            "mode": self.mode,
            "supports_checked": self.supports_checked,
            "worst_support": list(self.worst_support),
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "degenerate": self.degenerate,
        }


def _isometry_scan(columns_for_support, d: int, s: int, mode: str,
                   num_pairs: int, budget: int, seed: int,
                   samples: int) -> IsometryReport:
    total = comb(d, s)
    if mode == "exact":
        if total > budget:
            raise BudgetExceededError(
                f"exact mode would enumerate {total} supports "
                f"(budget {budget}); use monte_carlo mode", total)
        supports = combinations(range(d), s)
        checked = total
    elif mode == "monte_carlo":
        rng = np.random.default_rng(seed)
        picks = min(samples, total)
        seen = set()
        while len(seen) < picks:
            seen.add(tuple(sorted(rng.choice(d, size=s, replace=False).tolist())))
        supports = sorted(seen)
        checked = len(supports)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    delta = -np.inf
    worst = ()
    worst_lmin = worst_lmax = float("nan")
    for sup in supports:
        cols = columns_for_support(sup)
        lmin, lmax = _gram_extremes(cols)
        dev = max(1.0 - lmin / num_pairs, lmax / num_pairs - 1.0)
        if dev > delta:
            delta = dev
            worst = tuple(sup)
            worst_lmin, worst_lmax = lmin, lmax
    return IsometryReport(
        s=s, delta=float(delta), mode=mode, supports_checked=checked,
        worst_support=worst, lambda_min=worst_lmin, lambda_max=worst_lmax,
        degenerate=bool(delta >= 1.0),
    )


def block_isometry_constant(X: FeatureMatrix, omega: ObservationMask, s: int,
                            mode: str = "exact",
                            budget: int = EXACT_SUPPORT_BUDGET,
                            seed: int = 0,
                            samples: int = 200) -> IsometryReport:
    """Extremal deviation of B -> X' B X from a sqrt(N)-scaled isometry,
    over symmetric matrices with at most ``s`` nonzero rows.

    For each support the map restricted to symmetric matrices on it is a
    linear operator into R^N; the constant is the worst relative deviation of
    its Gram spectrum from N.
    """
    if not 1 <= s <= X.d:
        raise ValueError("block size s must lie in [1, d]")
    if omega.size == 0:
        raise ValueError("empty observation mask")

    def cols_for(sup):
        return _affinity_columns(X, omega, _sym_basis(sup))

    return _isometry_scan(cols_for, X.d, s, mode, omega.size, budget, seed, samples)


def block_rip_constant(D: DesignRows, omega_size: int, s: int,
                       mode: str = "exact",
                       budget: int = EXACT_SUPPORT_BUDGET,
                       seed: int = 0,
                       samples: int = 200) -> IsometryReport:
    """Same constant computed from the vectorized design rows.

    The restriction is to vectors vec(B) with B symmetric and block-sparse;
    this is the independent arithmetic route used to cross-check
    ``block_isometry_constant``.
    """
    if not 1 <= s <= D.d:
        raise ValueError("block size s must lie in [1, d]")

    def cols_for(sup):
        return _vec_columns(D, _sym_basis(sup))

    return _isometry_scan(cols_for, D.d, s, mode, omega_size, budget, seed, samples)


def rip_constant(A: np.ndarray, s: int, mode: str = "exact",
                 budget: int = EXACT_SUPPORT_BUDGET,
                 seed: int = 0, samples: int = 200) -> float:
    """Classical restricted isometry constant of an n x p matrix over
    ``s``-sparse vectors, normalized by the row count."""
    A = np.asarray(A, dtype=float)
    n, p = A.shape
    if not 1 <= s <= p:
        raise ValueError("sparsity s must lie in [1, p]")
    total = comb(p, s)
    if mode == "exact":
        if total > budget:
            raise BudgetExceededError(
                f"exact mode would enumerate {total} supports "
                f"(budget {budget}); use monte_carlo mode", total)
        supports = combinations(range(p), s)
    elif mode == "monte_carlo":
        rng = np.random.default_rng(seed)
        picks = min(samples, total)
        seen = set()
        while len(seen) < picks:
            seen.add(tuple(sorted(rng.choice(p, size=s, replace=False).tolist())))
        supports = sorted(seen)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    delta = -np.inf
    for sup in supports:
        sub = A[:, list(sup)]
        lmin, lmax = _gram_extremes(sub)
        delta = max(delta, 1.0 - lmin / n, lmax / n - 1.0)
    return float(delta)


def check_affinity_bound(X: FeatureMatrix, omega: ObservationMask,
                         m_budget: float) -> tuple:
    """Sufficient condition for the affinity bound over the whole l11 ball.

    Returns ``(guaranteed, witness)`` where ``witness`` is the largest
    sup-norm of an observed outer product X_j X_i'.  When the witness is at
    most one, |X_i' Theta X_j| <= l11(Theta) * witness < m_budget holds for
    every parameter with l11 norm below ``m_budget``.
    """
    if m_budget <= 0:
        raise ValueError("m_budget must be positive")
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    col_max = np.max(np.abs(X.entries), axis=0)
    witness = float(np.max(col_max[ii] * col_max[jj]))
    return witness <= 1.0, witness


def affinity_bound_holds(X: FeatureMatrix, theta: ParameterMatrix,
                         omega: ObservationMask, m_budget: float) -> bool:
    """Per-parameter affinity bound max_pairs |X_i' Theta X_j| < m_budget."""
    from .model import affinity  # local import to keep module deps one-way

    vals = affinity(X, theta, omega).values
    return bool(np.max(np.abs(vals)) < m_budget) if len(vals) else True
