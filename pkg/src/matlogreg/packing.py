"""Packing constructions for minimax lower bounds.

Two families are built here:

* constant-block parameters: rank-one matrices with a k x k block of equal
  entries, greedily packed so that every pair of kept supports is separated
  in Hamming distance by more than ``c0 * k^2``;
* tiled low-rank blocks: a k x r sign pattern repeated across the block,
  used only as a generator for KL audits of the rank-driven bound.

The Fano evaluation turns a packing plus its pairwise KL matrix into an
explicit minimax risk lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb, log

import numpy as np

from .design import BudgetExceededError
from .likelihood import kl_divergence
from .model import FeatureMatrix, ObservationMask, ParameterMatrix

__all__ = [
    "PackingSet",
    "build_constant_block",
    "block_hamming",
    "single_block_hamming",
    "greedy_packing",
    "packing_kl_matrix",
    "fano_lower_bound",
    "cardinality_audit",
    "build_tiled_low_rank",
    "tiled_separation_report",
]

GREEDY_SUPPORT_BUDGET = 10 ** 6


def build_constant_block(d: int, support, value: float) -> ParameterMatrix:
    """Rank-one parameter with all entries on support x support equal to
    ``value`` and zeros elsewhere."""
    support = tuple(sorted(int(i) for i in support))
    if value <= 0:
        raise ValueError("block value must be positive")
    if not support or support[0] < 0 or support[-1] >= d:
        raise ValueError("support out of range")
    if len(set(support)) != len(support):
        raise ValueError("support indices must be distinct")
    entries = np.zeros((d, d))
    entries[np.ix_(support, support)] = value
    return ParameterMatrix(entries, analytic_rank=1)


def block_hamming(E, Eprime) -> int:
    """Number of entries at which two block-pattern matrices differ."""
    A = E.entries if isinstance(E, ParameterMatrix) else np.asarray(E)
    B = Eprime.entries if isinstance(Eprime, ParameterMatrix) else np.asarray(Eprime)
    if A.shape != B.shape:
        raise ValueError("shape mismatch")
    return int(np.sum(A != B))


def single_block_hamming(k: int, m: int) -> int:
    """Closed form 2 (k^2 - (k - m)^2) for two single-block matrices whose
    supports differ in ``m`` indices (counted one way)."""
    if not 0 <= m <= k:
        raise ValueError("m must lie in [0, k]")
    return 2 * (k * k - (k - m) ** 2)


@dataclass
class PackingSet:
    """Greedy packing of constant-block parameters.

    ``members`` all share the block value; ``min_pairwise_hamming`` is
    verified exhaustively over the kept members.
    """

    d: int
    k: int
    members: list
    supports: list
    min_pairwise_hamming: int
    c0: float
    block_value: float

    def __len__(self) -> int:
        return len(self.members)

    def summary(self) -> dict:
        return {
            "d": self.d,
            "k": self.k,
            "cardinality": len(self.members),
            "supports": [list(s) for s in self.supports],
            "min_pairwise_hamming": self.min_pairwise_hamming,
            "c0": self.c0,
            "required_hamming_gt": self.c0 * self.k * self.k,
            "block_value": self.block_value,
        }


def greedy_packing(d: int, k: int, c0: float, order_seed: int,
                   block_value: float = 1.0,
                   budget: int = GREEDY_SUPPORT_BUDGET) -> PackingSet:
    """Maximal greedy packing of the constant-block family.

    Supports are visited in a seed-shuffled order; a candidate is kept when
    its Hamming distance to every kept member exceeds ``c0 * k^2``.  The
    construction is order-free in principle, so the seed only fixes which
    maximal packing is returned.  Pairwise separation of the result is
    re-verified exhaustively.
    """
    if not 1 <= k <= d:
        raise ValueError("need 1 <= k <= d")
    if not 0 < c0 < 2:
        raise ValueError("c0 must lie in (0, 2)")
    total = comb(d, k)
    if total > budget:
        raise BudgetExceededError(
            f"enumerating {total} supports exceeds the budget {budget}", total)
    supports = list(combinations(range(d), k))
    rng = np.random.default_rng(order_seed)
    rng.shuffle(supports)
    threshold = c0 * k * k

    kept: list = []
    for cand in supports:
        cs = set(cand)
        ok = True
        for s in kept:
            m = k - len(cs & set(s))
            if single_block_hamming(k, m) <= threshold:
                ok = False
                break
        if ok:
            kept.append(cand)
    kept.sort()

    members = [build_constant_block(d, s, block_value) for s in kept]
    min_h = _verify_pairwise(members, threshold)
    return PackingSet(d=d, k=k, members=members, supports=kept,
                      min_pairwise_hamming=min_h, c0=c0,
                      block_value=block_value)


def _verify_pairwise(members, threshold) -> int:
    min_h = None
    for a, b in combinations(members, 2):
        h = block_hamming(a, b)
        if h <= threshold:
            raise AssertionError(
                f"packing separation violated: {h} <= {threshold}")
        min_h = h if min_h is None else min(min_h, h)
    if min_h is None:
        min_h = 2 * len(members[0].support) ** 2 if members else 0
    return int(min_h)


def packing_kl_matrix(pack: PackingSet, X: FeatureMatrix,
                      omega: ObservationMask) -> np.ndarray:
    """Pairwise KL divergences between the edge distributions of the packing
    members.  Not symmetric in general; the diagonal is zero."""
    J = len(pack.members)
    out = np.zeros((J, J))
    for u in range(J):
        for v in range(J):
            if u != v:
                out[u, v] = kl_divergence(pack.members[u], pack.members[v],
                                          X, omega)
    return out


def fano_lower_bound(delta: float, kl_matrix: np.ndarray) -> float:
    """Minimax lower bound delta^2 * (1 - (avg KL + log 2) / log J) from a
    2 delta-separated family, clipped at zero."""
    kl_matrix = np.asarray(kl_matrix, dtype=float)
    J = kl_matrix.shape[0]
    if kl_matrix.ndim != 2 or kl_matrix.shape[1] != J:
        raise ValueError("kl_matrix must be square")
    if J < 2:
        raise ValueError("need at least two hypotheses")
    if delta <= 0:
        raise ValueError("delta must be positive")
    avg = float(np.sum(kl_matrix)) / (J * J)
    return delta * delta * max(0.0, 1.0 - (avg + log(2.0)) / log(J))


def cardinality_audit(pack: PackingSet, alpha: float, beta: float) -> dict:
    """Advisory audit of the packing cardinality against the entropy target.

    The target cardinality exponent is rho * k * log(d e / k) with
    rho = alpha / (-log(alpha beta)) * (-log beta + beta - 1), valid for
    k <= alpha * beta * d.  The guarantee is existential, so a greedy run
    falling short is reported, never asserted.
    """
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ValueError("alpha and beta must lie in (0, 1)")
    rho = alpha / (-log(alpha * beta)) * (-log(beta) + beta - 1.0)
    k, d = pack.k, pack.d
    applicable = k <= alpha * beta * d
    target_log2 = rho * k * log(d * np.e / k) / log(2.0)
    achieved_log2 = log(len(pack.members)) / log(2.0) if len(pack.members) else 0.0
    return {
        "alpha": alpha,
        "beta": beta,
        "rho": rho,
        "applicable": bool(applicable),
        "target_log2_cardinality": target_log2,
        "achieved_log2_cardinality": achieved_log2,
        "satisfied": bool(achieved_log2 >= target_log2),
    }


# ---------------------------------------------------------------------------
# tiled low-rank generator (KL-audit only)

def build_tiled_low_rank(d: int, k: int, r: int, value: float,
                         bits: np.ndarray) -> ParameterMatrix:
    """Symmetric rank <= r block built by tiling a k x r 0/1 pattern.

    The pattern scaled by ``value`` is repeated floor(k / r) times across the
    columns of the leading k x k block (zero padding on the remainder), then
    symmetrized by averaging with the transpose.  The support is the leading
    block by construction.
    """
    bits = np.asarray(bits)
    if bits.shape != (k, r):
        raise ValueError(f"bits must have shape ({k}, {r})")
    if not np.all(np.isin(bits, (0, 1))):
        raise ValueError("bits must be 0/1")
    if not 1 <= r <= k <= d:
        raise ValueError("need 1 <= r <= k <= d")
    reps = k // r
    tile = np.concatenate([bits] * reps + [np.zeros((k, k - r * reps))], axis=1)
    block = 0.5 * value * (tile + tile.T)
    entries = np.zeros((d, d))
    entries[:k, :k] = block
    entries = np.triu(entries) + np.triu(entries, 1).T
    return ParameterMatrix(entries)


def tiled_separation_report(d: int, k: int, r: int, value: float,
                            bits_u: np.ndarray, bits_v: np.ndarray) -> dict:
    """Frobenius separation of two tiled members against the rank-driven
    bracket  k r / 16 * (value / 2)^2 * floor(k / r)  <=  ||diff||_F^2
    <=  k^2 value^2, together with the bit Hamming distance that drives it."""
    theta_u = build_tiled_low_rank(d, k, r, value, bits_u)
    theta_v = build_tiled_low_rank(d, k, r, value, bits_v)
    diff = theta_u.entries - theta_v.entries
    fro_sq = float(np.sum(diff * diff))
    hamming = int(np.sum(np.asarray(bits_u) != np.asarray(bits_v)))
    lower = (k * r / 16.0) * (value / 2.0) ** 2 * (k // r)
    upper = k * k * value * value
    return {
        "bit_hamming": hamming,
        "fro_sq": fro_sq,
        "lower": lower,
        "upper": upper,
        "lower_holds": bool(fro_sq >= lower),
        "upper_holds": bool(fro_sq <= upper),
    }
