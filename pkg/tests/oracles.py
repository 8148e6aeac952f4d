"""Independent reference implementations used only by the tests.

These are deliberately naive: explicit loops, enumeration and plain
iteratively reweighted least squares, sharing no code with the package.
"""

import itertools
import math

import numpy as np


def kmeans_exhaustive(Z, K):
    """Global optimum of the within-cluster sum of squares, enumerating every
    assignment that uses all K clusters.

    Uses the identity  sum_i |x_i - mu|^2 = sum_i |x_i|^2 - |sum_i x_i|^2 / n
    so all K**n assignments are scored at once.
    """
    Z = np.asarray(Z, dtype=float)
    n = len(Z)
    A = np.array(list(itertools.product(range(K), repeat=n)))  # (K**n, n)
    total_sq = float((Z**2).sum())
    cost = np.full(len(A), total_sq)
    used = np.ones(len(A), dtype=bool)
    for k in range(K):
        member = (A == k).astype(float)
        size = member.sum(axis=1)
        used &= size > 0
        sums = member @ Z
        cost -= np.where(size > 0, (sums**2).sum(axis=1) / np.maximum(size, 1), 0.0)
    return float(cost[used].min())


def _dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def silhouette_loops(Z, labels):
    n = len(Z)
    scores = []
    clusters = sorted(set(labels))
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            scores.append(0.0)
            continue
        a = sum(_dist(Z[i], Z[j]) for j in own) / len(own)
        b = math.inf
        for c in clusters:
            if c == labels[i]:
                continue
            others = [j for j in range(n) if labels[j] == c]
            b = min(b, sum(_dist(Z[i], Z[j]) for j in others) / len(others))
        scores.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return sum(scores) / n


def _centroid(pts):
    return [sum(p[j] for p in pts) / len(pts) for j in range(len(pts[0]))]


def calinski_harabasz_loops(Z, labels):
    n = len(Z)
    clusters = sorted(set(labels))
    overall = _centroid(list(Z))
    between = within = 0.0
    for c in clusters:
        pts = [Z[i] for i in range(n) if labels[i] == c]
        mu = _centroid(pts)
        between += len(pts) * _dist(mu, overall) ** 2
        within += sum(_dist(p, mu) ** 2 for p in pts)
    K = len(clusters)
    if within == 0:
        return 1.0
    return (between / (K - 1)) / (within / (n - K))


def davies_bouldin_loops(Z, labels):
    clusters = sorted(set(labels))
    mus, spreads = [], []
    for c in clusters:
        pts = [Z[i] for i in range(len(Z)) if labels[i] == c]
        mu = _centroid(pts)
        mus.append(mu)
        spreads.append(sum(_dist(p, mu) for p in pts) / len(pts))
    total = 0.0
    for i in range(len(clusters)):
        worst = -math.inf
        for j in range(len(clusters)):
            if i != j:
                sep = _dist(mus[i], mus[j])
                worst = max(worst, (spreads[i] + spreads[j]) / sep if sep > 0 else math.inf)
        total += worst
    return total / len(clusters)


def auc_pairs(scores, y):
    """Fraction of (positive, negative) pairs ordered correctly, ties counting one half."""
    pos = [s for s, t in zip(scores, y) if t == 1]
    neg = [s for s, t in zip(scores, y) if t == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def irls_logistic(X, y, iters=50):
    """Unpenalized logistic maximum likelihood by plain IRLS (weighted least squares)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(X.shape[1])
    for _ in range(iters):
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.clip(p * (1 - p), 1e-10, None)
        z = eta + (y - p) / w
        WX = X * w[:, None]
        beta = np.linalg.solve(X.T @ WX, WX.T @ z)
    eta = X @ beta
    loglik = float(np.sum(y * eta - np.log1p(np.exp(eta))))
    return beta, loglik


def chi2_1df_sf_quadrature(g, n=200000):
    """Tail mass of the one-degree chi-square density.

    Substituting x = u**2 turns the density x**(-1/2) exp(-x/2) / sqrt(2 pi)
    into 2 exp(-u**2/2) / sqrt(2 pi), integrated from sqrt(g) to a far
    cutoff by the composite Simpson rule.
    """
    lo, hi = math.sqrt(g), math.sqrt(g) + 40.0
    h = (hi - lo) / n
    f = lambda u: 2.0 * math.exp(-u * u / 2.0) / math.sqrt(2.0 * math.pi)  # noqa: E731
    s = f(lo) + f(hi)
    for i in range(1, n):
        s += (4 if i % 2 else 2) * f(lo + i * h)
    return s * h / 3.0
