"""Estimators: exhaustive penalized MLE, rank-constrained MLE, logistic Lasso.

The penalized criterion is  -loglik(Theta) + c * K * R + c * K * log(d e / K)
with K the block size and R the rank of the candidate.  The exhaustive
search enumerates every (support, rank) model inside a declared budget and is
deliberately exponential; the Lasso is the convex relaxation, an l11-penalized
logistic regression on the upper-triangular parameterization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb, log

import numpy as np

from .design import (
    BudgetExceededError,
    _affinity_columns,
    _sym_basis,
    curvature_floor,
)
from .likelihood import log_likelihood
from .model import (
    EdgeObservations,
    FeatureMatrix,
    ObservationMask,
    ParameterMatrix,
    log_sigmoid,
    sigmoid,
)

__all__ = [
    "PenaltySpec",
    "FitOptions",
    "FitResult",
    "penalty",
    "fit_rank_constrained",
    "fit_penalized_mle",
    "fit_lasso",
    "lasso_kkt_residual",
    "predict_probabilities",
    "L11_SLACK",
]

# Strict inequality l11 < M is realized by projecting onto M * (1 - L11_SLACK).
L11_SLACK = 1e-9


@dataclass
class PenaltySpec:
    """Penalty constant and ambient dimension for the model-size penalty."""

    c: float
    d: int

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("penalty constant must be positive")
        if self.d < 1:
            raise ValueError("dimension must be positive")

    @classmethod
    def default_for(cls, d: int, m_budget: float) -> "PenaltySpec":
        """Curvature-matched default c = 2 / curvature_floor(m_budget)."""
        return cls(c=2.0 / curvature_floor(m_budget), d=d)


def penalty(K: int, R: int, spec: PenaltySpec) -> float:
    """Model-size penalty c * K * R + c * K * log(d e / K)."""
    if not 1 <= R <= K <= spec.d:
        raise ValueError(f"need 1 <= R <= K <= d, got R={R}, K={K}, d={spec.d}")
    return spec.c * (K * R + K * log(spec.d * np.e / K))


@dataclass
class FitOptions:
    max_iters: int = 500
    tol: float = 1e-9
    n_restarts: int = 5
    model_budget: int = 10 ** 6
    seed: int = 0
    threads: int = 1
    # Lasso-specific controls.
    lasso_max_iters: int = 20000
    kkt_tol: float = 1e-8
    polish: bool = True


@dataclass
class FitResult:
    theta_hat: ParameterMatrix
    objective: float
    support: tuple
    rank: int
    iterations: int
    converged: bool
    model_count_searched: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = self.theta_hat.d
        iu, ju = np.triu_indices(d)
        ent = self.theta_hat.entries
        entries = [[int(i), int(j), float(ent[i, j])]
                   for i, j in zip(iu, ju) if ent[i, j] != 0.0]
        out = {
            "d": d,
            "support": sorted(int(i) for i in self.support),
            "rank": int(self.rank),
            "entries_upper": entries,
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "diagnostics": self.diagnostics,
        }
        if self.model_count_searched is not None:
            out["model_count_searched"] = int(self.model_count_searched)
        return out


# ---------------------------------------------------------------------------
# shared numeric helpers

def _labels_array(Y) -> np.ndarray:
    if isinstance(Y, EdgeObservations):
        return Y.labels.astype(float)
    return np.asarray(Y, dtype=float).reshape(-1)


def _mirror_ut(B: np.ndarray) -> np.ndarray:
    """Exactly symmetric copy built from the upper triangle."""
    U = np.triu(B)
    return U + np.triu(B, 1).T


def uniform_soft_threshold_to_budget(z: np.ndarray, weights: np.ndarray,
                                     budget: float) -> np.ndarray:
    """Project upper-triangular coefficients onto {sum_i w_i |z_i| <= budget}.

    Under the Frobenius metric on symmetric matrices the exact projection
    onto the l11 ball is a uniform soft threshold; the weights (1 on the
    diagonal, 2 off it) only enter the budget accounting.  Solved exactly by
    sorting the breakpoints.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    az = np.abs(z)
    total = float(weights @ az)
    if total <= budget:
        return z.copy()
    order = np.argsort(-az)
    az_s = az[order]
    w_s = weights[order]
    cw = np.cumsum(w_s * az_s)
    ww = np.cumsum(w_s)
    tau_candidates = (cw - budget) / ww
    az_next = np.concatenate([az_s[1:], [0.0]])
    m = int(np.argmax(tau_candidates >= az_next))
    tau = tau_candidates[m]
    return np.sign(z) * np.maximum(az - tau, 0.0)


def uniform_soft_threshold_to_budget_batch(z: np.ndarray, weights: np.ndarray,
                                           budget: float) -> np.ndarray:
    """Row-wise version of ``uniform_soft_threshold_to_budget``."""
    az = np.abs(z)
    total = az @ weights
    need = total > budget
    out = z.copy()
    if not np.any(need):
        return out
    zi = z[need]
    azi = az[need]
    order = np.argsort(-azi, axis=1)
    az_s = np.take_along_axis(azi, order, axis=1)
    w_s = np.broadcast_to(weights, azi.shape)
    w_s = np.take_along_axis(w_s, order, axis=1)
    cw = np.cumsum(w_s * az_s, axis=1)
    ww = np.cumsum(w_s, axis=1)
    tau_candidates = (cw - budget) / ww
    az_next = np.concatenate([az_s[:, 1:], np.zeros((len(azi), 1))], axis=1)
    m = np.argmax(tau_candidates >= az_next, axis=1)
    tau = tau_candidates[np.arange(len(azi)), m]
    out[need] = np.sign(zi) * np.maximum(azi - tau[:, None], 0.0)
    return out


def _truncate_rank(B: np.ndarray, r: int) -> np.ndarray:
    """Keep the r eigencomponents of largest magnitude."""
    if r >= B.shape[0]:
        return B
    w, V = np.linalg.eigh(B)
    keep = np.argsort(-np.abs(w))[:r]
    return _mirror_ut((V[:, keep] * w[keep]) @ V[:, keep].T)


def _project_l11_matrix(B: np.ndarray, budget: float) -> np.ndarray:
    k = B.shape[0]
    iu, ju = np.triu_indices(k)
    v = np.where(iu == ju, 1.0, 2.0)
    z = uniform_soft_threshold_to_budget(B[iu, ju], v, budget)
    out = np.zeros_like(B)
    out[iu, ju] = z
    out[ju, iu] = z
    return out


# ---------------------------------------------------------------------------
# rank-constrained MLE on a fixed support

def fit_rank_constrained(Y, X: FeatureMatrix, omega: ObservationMask,
                         support, r: int, m_budget: float,
                         opts: FitOptions | None = None) -> FitResult:
    """Local minimizer of the negative log-likelihood over symmetric matrices
    supported on ``support`` x ``support`` with rank at most ``r`` and l11
    norm strictly below ``m_budget``.

    Projected gradient on the active block: a gradient step, eigendecomposition
    truncation to the ``r`` components of largest magnitude, then projection
    onto the l11 ball.  The best of ``opts.n_restarts`` initializations is
    kept (the zero start plus seeded random ones).  When ``r`` equals the
    block size the problem is convex and the result is the global optimum up
    to the stated tolerance.
    """
    opts = opts or FitOptions()
    support = tuple(sorted(int(i) for i in support))
    k = len(support)
    if k == 0:
        raise ValueError("empty support")
    if not 1 <= r <= k:
        raise ValueError(f"rank constraint must satisfy 1 <= r <= {k}, got {r}")
    if m_budget <= 0:
        raise ValueError("m_budget must be positive")
    if len(set(support)) != k or support[0] < 0 or support[-1] >= X.d:
        raise ValueError("support indices must be distinct and inside [0, d)")

    y = _labels_array(Y)
    cap = m_budget * (1.0 - L11_SLACK)
    XS = X.entries[support, :]
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    XSi, XSj = XS[:, ii], XS[:, jj]

    # Smooth-part Lipschitz bound from the restricted design spectrum.
    cols = _affinity_columns(X, omega, _sym_basis(support))
    smax_sq = float(np.linalg.norm(cols, 2)) ** 2
    if smax_sq == 0.0:
        theta = _embed(np.zeros((k, k)), support, X.d)
        obj = -log_likelihood(Y, X, theta, omega)
        return FitResult(theta, obj, support, 0, 0, True)
    step = 4.0 / smax_sq

    def neg_ll(B):
        a = np.einsum("st,st->t", XSi, B @ XSj)
        return -float(np.sum(y * log_sigmoid(a) + (1.0 - y) * log_sigmoid(-a)))

    def grad_neg_ll(B):
        a = np.einsum("st,st->t", XSi, B @ XSj)
        resid = y - sigmoid(a)
        R = np.zeros((omega.n, omega.n))
        np.add.at(R, (ii, jj), 0.5 * resid)
        np.add.at(R, (jj, ii), 0.5 * resid)
        return -(XS @ R @ XS.T)

    best_B, best_f, best_iters, best_conv = None, np.inf, 0, False
    n_starts = max(1, opts.n_restarts)
    for restart in range(n_starts):
        if restart == 0:
            B = np.zeros((k, k))
        else:
            rng = np.random.default_rng((opts.seed, restart) + support)
            scale = m_budget / (4.0 * k * k)
            B = _mirror_ut(scale * rng.standard_normal((k, k)))
            B = _project_l11_matrix(B, cap)
        f_prev = neg_ll(B)
        iters = 0
        converged = False
        for iters in range(1, opts.max_iters + 1):
            B_new = B - step * grad_neg_ll(B)
            B_new = _mirror_ut(B_new)
            if r < k:
                B_new = _truncate_rank(B_new, r)
            B_new = _project_l11_matrix(B_new, cap)
            f_new = neg_ll(B_new)
            B = B_new
            if abs(f_prev - f_new) <= opts.tol * max(1.0, abs(f_new)):
                f_prev = f_new
                converged = True
                break
            f_prev = f_new
        if f_prev < best_f:
            best_f, best_B, best_iters, best_conv = f_prev, B, iters, converged

    # Enforce feasibility exactly: truncate, then rescale if the projection
    # nudged the rank back up (rescaling preserves rank).
    B = _truncate_rank(best_B, r) if r < k else best_B
    l11 = float(np.sum(np.abs(B)))
    if l11 > cap and l11 > 0:
        B = B * (cap / l11)
    theta = _embed(B, support, X.d)
    obj = -log_likelihood(Y, X, theta, omega)
    return FitResult(theta, obj, support, theta.rank, best_iters, best_conv)


def _embed(B: np.ndarray, support: tuple, d: int) -> ParameterMatrix:
    full = np.zeros((d, d))
    full[np.ix_(support, support)] = _mirror_ut(B)
    return ParameterMatrix(full)


# ---------------------------------------------------------------------------
# exhaustive penalized MLE

def count_models(d: int, k_max: int, r_max: int) -> int:
    return sum(comb(d, K) * min(K, r_max) for K in range(1, k_max + 1))


def fit_penalized_mle(Y, X: FeatureMatrix, omega: ObservationMask,
                      spec: PenaltySpec, m_budget: float,
                      k_max: int, r_max: int,
                      opts: FitOptions | None = None) -> FitResult:
    """Exhaustive model search: every support of size up to ``k_max`` and
    every rank up to ``min(K, r_max)``, each fitted by
    ``fit_rank_constrained``; returns the model minimizing the penalized
    criterion.  Ties are broken deterministically by smaller block size,
    then rank, then lexicographic support; the empty model is always a
    candidate with penalty zero.

    The search is exponential by design; it refuses to run past
    ``opts.model_budget`` models, naming the count.
    """
    opts = opts or FitOptions()
    if not 1 <= k_max <= X.d:
        raise ValueError("k_max must lie in [1, d]")
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    total = count_models(X.d, k_max, r_max)
    if total > opts.model_budget:
        raise BudgetExceededError(
            f"exhaustive search would fit {total} models "
            f"(budget {opts.model_budget})", total)

    y = _labels_array(Y)
    zero = ParameterMatrix.zeros(X.d)
    null_obj = -log_likelihood(Y, X, zero, omega)
    best = FitResult(zero, null_obj, (), 0, 0, True, model_count_searched=total)
    best.diagnostics["selected_model"] = {"K": 0, "R": 0}

    def evaluate(model):
        K, R, S = model
        fit = fit_rank_constrained(y, X, omega, S, R, m_budget, opts)
        realized_k = fit.theta_hat.block_sparsity
        realized_r = fit.theta_hat.rank
        if realized_k == 0:
            pen = 0.0
        else:
            pen = penalty(realized_k, max(realized_r, 1), spec)
        return fit, fit.objective + pen

    models = [(K, R, S)
              for K in range(1, k_max + 1)
              for R in range(1, min(K, r_max) + 1)
              for S in combinations(range(X.d), K)]
    if opts.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            results = list(pool.map(evaluate, models))
    else:
        results = map(evaluate, models)

    for (K, R, S), (fit, obj) in zip(models, results):
        if obj < best.objective:
            best = FitResult(fit.theta_hat, obj, S, fit.rank,
                             fit.iterations, fit.converged,
                             model_count_searched=total)
            best.diagnostics["selected_model"] = {"K": K, "R": R}
            best.diagnostics["neg_loglik"] = fit.objective
    return best


# ---------------------------------------------------------------------------
# logistic Lasso on the upper-triangular parameterization

def _ut_design(X: FeatureMatrix, omega: ObservationMask):
    """Design matrix in upper-triangular coordinates.

    Off-diagonal coordinates drive both symmetric entries, so their columns
    carry the two outer-product terms; the matching weight 2 shows up in the
    l1 penalty.
    """
    d = X.d
    iu, ju = np.triu_indices(d)
    weights = np.where(iu == ju, 1.0, 2.0)
    ii, jj = omega.pairs[:, 0], omega.pairs[:, 1]
    Xi = X.entries[:, ii]
    Xj = X.entries[:, jj]
    D = np.empty((omega.size, len(iu)))
    for p, (u, v) in enumerate(zip(iu, ju)):
        if u == v:
            D[:, p] = Xi[u] * Xj[u]
        else:
            D[:, p] = Xi[u] * Xj[v] + Xi[v] * Xj[u]
    return D, iu, ju, weights


def _theta_from_ut(coef: np.ndarray, iu, ju, d: int) -> ParameterMatrix:
    M = np.zeros((d, d))
    M[iu, ju] = coef
    M[ju, iu] = coef
    return ParameterMatrix(M)


def lasso_kkt_residual(coef: np.ndarray, grad: np.ndarray,
                       weights: np.ndarray, lam: float) -> float:
    """Worst stationarity violation of the l11-penalized problem, in the
    units of the penalty level: zero coordinates must have |g| <= lam * w,
    active ones g + lam * w * sign = 0."""
    gw = grad / weights
    active = coef != 0.0
    res_zero = np.maximum(np.abs(gw[~active]) - lam, 0.0)
    res_active = np.abs(gw[active] + lam * np.sign(coef[active]))
    worst = 0.0
    if res_zero.size:
        worst = max(worst, float(res_zero.max()))
    if res_active.size:
        worst = max(worst, float(res_active.max()))
    return worst


def fit_lasso(Y, X: FeatureMatrix, omega: ObservationMask, lam: float,
              opts: FitOptions | None = None) -> FitResult:
    """l11-penalized logistic regression over symmetric matrices.

    Accelerated proximal gradient with a monotone safeguard (a rejected
    momentum step falls back to the plain proximal step, so the objective
    sequence is nonincreasing after the first iteration), step size from the
    design spectrum, followed by an active-set Newton polish that drives the
    KKT residual to ``opts.kkt_tol * lam``.
    """
    opts = opts or FitOptions()
    if lam <= 0:
        raise ValueError("the penalty level must be positive")
    y = _labels_array(Y)
    if len(y) != omega.size:
        raise ValueError(f"{len(y)} labels for {omega.size} observed pairs")
    D, iu, ju, w = _ut_design(X, omega)
    P = D.shape[1]

    def smooth(coef):
        a = D @ coef
        return -float(np.sum(y * log_sigmoid(a) + (1.0 - y) * log_sigmoid(-a)))

    def smooth_grad(coef):
        a = D @ coef
        return -(D.T @ (y - sigmoid(a)))

    def objective(coef):
        return smooth(coef) + lam * float(w @ np.abs(coef))

    lip = (float(np.linalg.norm(D, 2)) ** 2) / 4.0
    if lip == 0.0:
        theta = _theta_from_ut(np.zeros(P), iu, ju, X.d)
        return FitResult(theta, objective(np.zeros(P)), (), 0, 0, True)
    step = 1.0 / lip
    thresh = step * lam * w

    def prox_step(point):
        g = smooth_grad(point)
        z = point - step * g
        return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)

    x = np.zeros(P)
    f_x = objective(x)
    z_m = x
    t_m = 1.0
    obj_trace = [f_x]
    converged = False
    iters = 0
    for iters in range(1, opts.lasso_max_iters + 1):
        cand = prox_step(z_m)
        f_cand = objective(cand)
        if f_cand > f_x:
            cand = prox_step(x)
            f_cand = objective(cand)
            t_m = 1.0
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_m * t_m))
        z_m = cand + ((t_m - 1.0) / t_next) * (cand - x)
        x, f_prev, f_x = cand, f_x, f_cand
        t_m = t_next
        obj_trace.append(f_x)
        if abs(f_prev - f_x) <= opts.tol * max(1.0, abs(f_x)):
            converged = True
            break

    if opts.polish:
        x, polish_ok = _active_set_polish(
            x, smooth, smooth_grad, D, y, w, lam, opts)
        converged = converged or polish_ok
    grad = smooth_grad(x)
    kkt = lasso_kkt_residual(x, grad, w, lam)
    theta = _theta_from_ut(x, iu, ju, X.d)
    result = FitResult(theta, objective(x), tuple(sorted(theta.support)),
                       theta.rank, iters, converged and kkt <= opts.kkt_tol * lam)
    result.diagnostics = {
        "kkt_residual": kkt,
        "lambda": lam,
        "objective_trace_monotone": bool(
            np.all(np.diff(np.asarray(obj_trace)[1:]) <= 1e-12)),
    }
    return result


def _active_set_polish(coef, smooth, smooth_grad, D, y, w, lam, opts):
    """Newton refinement on the active coordinates with fixed signs.

    Alternates restricted Newton steps (capped at the first sign change,
    dropping coordinates that hit zero) with KKT screening that admits the
    worst violating zero coordinate.  Terminates once the residual is inside
    ``opts.kkt_tol * lam``.
    """
    coef = coef.copy()
    target = opts.kkt_tol * lam
    for _ in range(200):
        grad = smooth_grad(coef)
        res = lasso_kkt_residual(coef, grad, w, lam)
        if res <= target:
            return coef, True
        active = coef != 0.0
        gw = np.abs(grad / w)
        violations = np.where(~active, np.maximum(gw - lam, 0.0), 0.0)
        if violations.max() > target:
            j = int(np.argmax(violations))
            active[j] = True
            coef[j] = 0.0
            # seed the sign from the descent direction
            sign_seed = -np.sign(grad[j])
        else:
            sign_seed = None
        idx = np.flatnonzero(active)
        signs = np.sign(coef[idx])
        if sign_seed is not None:
            signs[idx == j] = sign_seed
        signs[signs == 0.0] = 1.0
        for _ in range(60):
            a = D[:, idx] @ coef[idx]
            p = sigmoid(a)
            g_r = -(D[:, idx].T @ (y - p)) + lam * w[idx] * signs
            if np.max(np.abs(g_r)) <= 0.1 * target:
                break
            H = (D[:, idx] * (p * (1.0 - p))[:, None]).T @ D[:, idx]
            H[np.diag_indices_from(H)] += 1e-12 * max(1.0, np.trace(H))
            direction = -np.linalg.solve(H, g_r)
            # largest step before any active coordinate crosses zero
            cur = coef[idx]
            crossing = np.where(direction * signs < 0,
                                -cur / np.where(direction == 0, 1.0, direction),
                                np.inf)
            alpha_max = float(min(1.0, np.min(crossing))) if crossing.size else 1.0
            alpha = max(alpha_max, 0.0)
            f0 = smooth(_scatter(coef, idx, cur)) + lam * float(
                w[idx] @ np.abs(cur))
            improved = False
            for _ in range(30):
                trial = cur + alpha * direction
                f1 = smooth(_scatter(coef, idx, trial)) + lam * float(
                    w[idx] @ np.abs(trial))
                if f1 <= f0 + 1e-12 * max(1.0, abs(f0)):
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                break
            coef[idx] = cur + alpha * direction
            dropped = np.abs(coef[idx]) <= 1e-15
            coef[idx[dropped]] = 0.0
            keep = ~dropped
            if not np.all(keep):
                idx = idx[keep]
                signs = signs[keep]
                if idx.size == 0:
                    break
    grad = smooth_grad(coef)
    return coef, lasso_kkt_residual(coef, grad, w, lam) <= target


def _scatter(coef, idx, values):
    out = coef.copy()
    out[idx] = values
    return out


def predict_probabilities(theta: ParameterMatrix, X: FeatureMatrix,
                          omega: ObservationMask) -> tuple:
    """Fitted edge probabilities and raw affinities over the given pairs.

    The probability map is 1/4-Lipschitz in the affinity, so per-pair
    probability errors are bounded by a quarter of the affinity errors.
    """
    from .model import affinity, edge_probabilities

    aff = affinity(X, theta, omega)
    return edge_probabilities(aff), aff.values
