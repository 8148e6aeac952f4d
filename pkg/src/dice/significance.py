"""Logistic outcome heads over cluster memberships and confounders, pairwise
likelihood-ratio tests between clusters, and the hinge penalty that pushes
every pair of clusters towards a significant outcome difference."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import autodiff as ad
from .clustering import one_hot
from .numeric import chi_square_isf_1df, chi_square_sf_1df

RIDGE = 1e-10
PROB_FLOOR = 1e-12
# |linear predictor| beyond this means fitted probabilities within ~1e-6 of 0/1
SEPARATION_ETA = 13.8


class SingularHessianError(np.linalg.LinAlgError):
    pass


class EmptyClusterError(ValueError):
    def __init__(self, cluster: int):
        super().__init__(f"cluster {cluster} is empty")
        self.cluster = cluster


@dataclass(frozen=True)
class SignificanceConfig:
    alpha: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def alpha_g(self) -> float:
        return chi_square_isf_1df(self.alpha)


@dataclass
class LogisticFit:
    coef: np.ndarray
    loglik: float
    converged: bool
    warning: bool
    n_iter: int

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(np.asarray(X, dtype=np.float64) @ self.coef)


def _sigmoid(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def _loglik(eta, y):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(X, y, init=None, max_iter: int = 100, ridge: float = RIDGE, tol: float = 1e-8) -> LogisticFit:
    """Ridge-stabilized maximum likelihood by damped Newton iterations.

    ``X`` must already contain the intercept column. The returned
    ``loglik`` is the plain Bernoulli log-likelihood at the penalized
    optimum. ``warning`` flags non-convergence or (quasi-)separation.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, k = X.shape
    if y.shape != (n,):
        raise ValueError("design rows must match outcome length")
    beta = np.zeros(k) if init is None else np.array(init, dtype=np.float64)

    def objective(b):
        return -_loglik(X @ b, y) + ridge * float(b @ b)

    f = objective(beta)
    converged = False
    it = 0
    for it in range(max_iter + 1):
        eta = X @ beta
        p = _sigmoid(eta)
        score = X.T @ (y - p) - 2.0 * ridge * beta
        if np.max(np.abs(score), initial=0.0) < tol:
            converged = True
            break
        if it == max_iter:
            break
        w = p * (1.0 - p)
        H = (X * w[:, None]).T @ X + 2.0 * ridge * np.eye(k)
        step = None
        damping = 0.0
        for _ in range(8):
            try:
                step = cho_solve(cho_factor(H + damping * np.eye(k)), score)
                break
            except LinAlgError:
                damping = max(1e-10, 10.0 * damping) * max(1.0, float(np.trace(H)) / k)
        if step is None or not np.all(np.isfinite(step)):
            raise SingularHessianError("logistic Hessian is singular even after damping")
        t = 1.0
        decrease = float(score @ step)
        for _ in range(50):
            candidate = beta + t * step
            fc = objective(candidate)
            if fc <= f - 1e-4 * t * decrease:
                break
            t *= 0.5
        else:
            break  # no further progress possible in floating point
        beta, f = candidate, fc
    eta = X @ beta
    warning = (not converged) or bool(np.max(np.abs(eta), initial=0.0) > SEPARATION_ETA)
    return LogisticFit(coef=beta, loglik=_loglik(eta, y), converged=converged, warning=warning, n_iter=it)


def membership_design(c, v, drop=()) -> np.ndarray:
    """[memberships minus the ``drop`` columns, confounders, intercept]."""
    c = np.asarray(c, dtype=np.float64)
    keep = [k for k in range(c.shape[1]) if k not in set(drop)]
    v = np.asarray(v, dtype=np.float64).reshape(c.shape[0], -1)
    return np.column_stack([c[:, keep], v, np.ones(c.shape[0])])


def outcome_bce_loss(y_hat, y):
    """-sum_p [y log(yhat) + (1-y) log(1-yhat)] with clamped probabilities."""
    on_tape = isinstance(y_hat, ad.Var)
    y = np.asarray(y, dtype=np.float64)
    q = ad.clip(ad.as_var(y_hat), PROB_FLOOR, 1.0 - PROB_FLOOR)
    loss = ad.neg(ad.add(ad.sum(y * ad.log(q)), ad.sum((1.0 - y) * ad.log(1.0 - q))))
    return loss if on_tape else float(loss.value)


def _as_onehot(c, K=None):
    c = np.asarray(c)
    if c.ndim == 1:
        return one_hot(c, int(c.max()) + 1 if K is None else K)
    return c.astype(np.float64)


def likelihood_ratio(c, v, y, k1: int, k2: int) -> float:
    """G statistic for dropping cluster ``k2``'s indicator with ``k1`` as reference."""
    c = _as_onehot(c)
    if k1 == k2:
        raise ValueError("k1 and k2 must differ")
    counts = c.sum(axis=0)
    for k in (k1, k2):
        if counts[k] == 0:
            raise EmptyClusterError(k)
    full = fit_logistic(membership_design(c, v, drop=(k1,)), y)
    reduced = fit_logistic(membership_design(c, v, drop=(k1, k2)), y)
    return 2.0 * (full.loglik - reduced.loglik)


@dataclass
class SignificanceResult:
    p_values: np.ndarray
    g_stats: np.ndarray
    eligible: bool
    alpha: float
    alpha_g: float
    empty_clusters: list = field(default_factory=list)
    warnings: int = 0

    @property
    def max_p(self) -> float:
        vals = self.p_values[~np.eye(self.p_values.shape[0], dtype=bool)]
        vals = vals[np.isfinite(vals)]
        return float(vals.max()) if vals.size else float("nan")

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if not np.isfinite(x) else float(x) for x in row] for row in a]

        return {
            "p_values": clean(self.p_values),
            "g_stats": clean(self.g_stats),
            "eligible": self.eligible,
            "alpha": self.alpha,
            "alpha_g": self.alpha_g,
            "empty_clusters": list(self.empty_clusters),
        }


def significance_matrix(c, v, y, config: SignificanceConfig = SignificanceConfig(), K: int | None = None) -> SignificanceResult:
    """Pairwise p-value matrix S (zero diagonal) and the all-pairs eligibility flag.

    The model with reference ``k1`` is shared by every ``k2``, and the model
    masking both is the same for (k1, k2) and (k2, k1), so only K + K(K-1)/2
    fits are needed.
    """
    c = _as_onehot(c, K)
    K = c.shape[1]
    G = np.full((K, K), np.nan)
    S = np.full((K, K), np.nan)
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(S, 0.0)
    empty = [int(k) for k in np.flatnonzero(c.sum(axis=0) == 0)]
    live = [k for k in range(K) if k not in empty]
    n_warn = 0
    full = {}
    for k1 in live:
        fit = fit_logistic(membership_design(c, v, drop=(k1,)), y)
        full[k1] = fit.loglik
        n_warn += fit.warning
    for k1, k2 in combinations(live, 2):
        red = fit_logistic(membership_design(c, v, drop=(k1, k2)), y)
        n_warn += red.warning
        for a, b in ((k1, k2), (k2, k1)):
            g = 2.0 * (full[a] - red.loglik)
            G[a, b] = g
            S[a, b] = chi_square_sf_1df(max(g, 0.0))
    off = ~np.eye(K, dtype=bool)
    eligible = not empty and bool(np.all(S[off] < config.alpha))
    return SignificanceResult(S, G, eligible, config.alpha, config.alpha_g, empty, n_warn)


class PenaltyHeads:
    """Warm-started full/reduced logistic heads, one pair per unordered (k1, k2).

    For pair (k1, k2) with k1 < k2 the full head masks k1 (the reference) and
    the reduced head masks both. Coefficients are stored expanded to all K
    membership columns with zeros at masked positions so every pair can be
    evaluated with one matrix product.
    """

    def __init__(self, K: int, n_confounders: int):
        self.K = K
        self.m = n_confounders
        self.pairs = list(combinations(range(K), 2))
        n = len(self.pairs)
        self.full_c = np.zeros((K, n))
        self.full_v = np.zeros((n_confounders, n))
        self.full_b = np.zeros(n)
        self.red_c = np.zeros((K, n))
        self.red_v = np.zeros((n_confounders, n))
        self.red_b = np.zeros(n)
        self._warm: dict = {}

    def refresh(self, soft, v, y, steps: int = 5) -> None:
        soft = np.asarray(soft, dtype=np.float64)
        for j, (k1, k2) in enumerate(self.pairs):
            for name, drop, cm, vm, bm in (
                ("full", (k1,), self.full_c, self.full_v, self.full_b),
                ("red", (k1, k2), self.red_c, self.red_v, self.red_b),
            ):
                key = (name, k1, k2)
                fit = fit_logistic(membership_design(soft, v, drop=drop), y, init=self._warm.get(key), max_iter=steps)
                self._warm[key] = fit.coef
                keep = [k for k in range(self.K) if k not in drop]
                cm[:, j] = 0.0
                cm[keep, j] = fit.coef[: len(keep)]
                vm[:, j] = fit.coef[len(keep) : len(keep) + self.m]
                bm[j] = fit.coef[-1]

    def pair_bce(self, soft, v, y):
        """Per-pair summed BCE of the full and reduced heads on memberships ``soft``."""
        v = np.asarray(v, dtype=np.float64).reshape(len(y), -1)
        y = np.asarray(y, dtype=np.float64)[:, None]
        out = []
        for cm, vm, bm in ((self.full_c, self.full_v, self.full_b), (self.red_c, self.red_v, self.red_b)):
            eta = ad.add(ad.matmul(soft, cm), v @ vm + bm)
            # -log Bernoulli likelihood = softplus(eta) - y * eta, smooth even for saturated heads
            out.append(ad.sum(ad.sub(ad.softplus(eta), ad.mul(eta, y)), axis=0))
        return out[0], out[1]


def soft_g_statistics(soft, v, y, heads: PenaltyHeads, scale: float = 1.0):
    """Differentiable G~ per unordered pair: 2 * scale * (L2_reduced - L2_full)."""
    l_full, l_red = heads.pair_bce(soft, v, y)
    return ad.sub(l_red, l_full) * (2.0 * scale)


def significance_penalty(soft, v, y, heads: PenaltyHeads, config: SignificanceConfig = SignificanceConfig(), scale: float = 1.0):
    """Sum over unordered cluster pairs of max(0, alpha_G - G~)."""
    on_tape = isinstance(soft, ad.Var)
    g = soft_g_statistics(ad.as_var(soft), v, y, heads, scale)
    pen = ad.sum(ad.relu(ad.sub(config.alpha_g, g)))
    return pen if on_tape else float(pen.value)
