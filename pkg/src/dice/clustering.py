"""k-means over representations and the softmax cluster-classification head
trained on k-means pseudo-labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .numeric import make_rng

PROB_FLOOR = 1e-12


@dataclass
class KMeansResult:
    centers: np.ndarray  # (K, d); column view is the d x K centroid matrix
    labels: np.ndarray
    objective: float
    n_iter: int

    @property
    def M(self) -> np.ndarray:
        return self.centers.T

    @property
    def onehot(self) -> np.ndarray:
        return one_hot(self.labels, self.centers.shape[0])


def one_hot(labels, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, K))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _sq_dists(Z, C):
    return ((Z[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(Z, K, rng):
    n = Z.shape[0]
    centers = [Z[int(rng.integers(n))]]
    d2 = ((Z - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers.append(Z[idx])
        d2 = np.minimum(d2, ((Z - Z[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _repair_empty(labels, dist_to_own, K):
    counts = np.bincount(labels, minlength=K)
    for k in np.flatnonzero(counts == 0):
        movable = counts[labels] > 1
        if not movable.any():
            break
        far = int(np.argmax(np.where(movable, dist_to_own, -np.inf)))
        counts[labels[far]] -= 1
        labels[far] = k
        counts[k] = 1
        dist_to_own[far] = 0.0
    return labels


def _lloyd(Z, K, rng, max_iter):
    C = _kmeans_pp(Z, K, rng)
    labels = None
    previous = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        D = _sq_dists(Z, C)
        new = np.argmin(D, axis=1)  # ties go to the lowest index
        new = _repair_empty(new, D[np.arange(len(Z)), new].copy(), K)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        C = np.array([Z[labels == k].mean(axis=0) for k in range(K)])
        objective = float(((Z - C[labels]) ** 2).sum())
        assert objective <= previous + 1e-9 * max(1.0, abs(previous)), "k-means objective increased"
        previous = objective
    return C, labels, float(((Z - C[labels]) ** 2).sum()), it


def _hartigan(Z, labels, K, max_moves=10000):
    """Best single-point transfer, repeated while it lowers the objective once
    centroid shifts are accounted for. Escapes Lloyd fixed points that are not
    local optima under single moves."""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    C = np.array([Z[labels == k].mean(axis=0) for k in range(K)])
    idx = np.arange(len(Z))
    for _ in range(max_moves):
        D = _sq_dists(Z, C)
        own = counts[labels]
        removal = np.where(own > 1, own / np.maximum(own - 1.0, 1.0) * D[idx, labels], -np.inf)
        addition = counts / (counts + 1.0) * D
        addition[idx, labels] = np.inf
        target = np.argmin(addition, axis=1)
        gain = removal - addition[idx, target]
        i = int(np.argmax(gain))
        if not gain[i] > 1e-12 * max(1.0, removal[i]):
            break
        a, b = labels[i], target[i]
        C[a] = (C[a] * counts[a] - Z[i]) / (counts[a] - 1.0)
        C[b] = (C[b] * counts[b] + Z[i]) / (counts[b] + 1.0)
        counts[a] -= 1.0
        counts[b] += 1.0
        labels[i] = b
    C = np.array([Z[labels == k].mean(axis=0) for k in range(K)])
    return C, labels, float(((Z - C[labels]) ** 2).sum())


def kmeans(Z, K: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds, best of ``n_init`` restarts,
    polished by Hartigan single-point transfers."""
    Z = np.asarray(Z, dtype=np.float64)
    if K < 2:
        raise ValueError("K must be at least 2")
    if Z.shape[0] < K:
        raise ValueError(f"need at least K={K} points, got {Z.shape[0]}")
    rng = make_rng(seed)
    best = None
    for _ in range(n_init):
        C, labels, obj, it = _lloyd(Z, K, rng, max_iter)
        C2, labels2, obj2 = _hartigan(Z, labels, K)
        if obj2 < obj:
            C, labels, obj = C2, labels2, obj2
        if best is None or obj < best.objective:
            best = KMeansResult(C, labels, obj, it)
    return best


def assign_to_centers(Z, centers) -> np.ndarray:
    return np.argmin(_sq_dists(np.asarray(Z, dtype=np.float64), centers), axis=1)


def clustering_objective(Z, centers, labels) -> float:
    return float(((np.asarray(Z) - centers[labels]) ** 2).sum())


def align_labels(new, previous, K: int) -> np.ndarray:
    """Permutation ``perm`` of new cluster ids maximizing agreement: new label i -> perm[i]."""
    confusion = np.zeros((K, K))
    np.add.at(confusion, (np.asarray(new), np.asarray(previous)), 1.0)
    rows, cols = linear_sum_assignment(-confusion)
    perm = np.empty(K, dtype=int)
    perm[rows] = cols
    return perm


def init_cluster_head(latent_dim: int, K: int, rng) -> dict:
    bound = 1.0 / np.sqrt(latent_dim)
    return {
        "clu_W": rng.uniform(-bound, bound, size=(latent_dim, K)),
        "clu_b": rng.uniform(-bound, bound, size=(K,)),
    }


def cluster_logits(z, params: dict):
    return ad.add(ad.matmul(z, params["clu_W"]), params["clu_b"])


def predict_cluster(z, params: dict):
    """Soft memberships softmax(z W + b); rows sum to one.

    Accepts a single representation or a (P, d) stack; returns numpy for
    numpy input and a tape node for tape input.
    """
    if isinstance(z, ad.Var):
        return ad.softmax(cluster_logits(z, params))
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    out = ad.softmax(cluster_logits(np.atleast_2d(z), params)).value
    return out[0] if single else out


def cluster_ce_loss(hard, soft):
    """-sum_p sum_k c_pk log(chat_pk), probabilities clamped to [1e-12, 1-1e-12]."""
    on_tape = isinstance(soft, ad.Var)
    soft = ad.as_var(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ValueError(f"membership shapes differ: {hard.shape} vs {soft.shape}")
    loss = ad.neg(ad.sum(hard * ad.log(ad.clip(soft, PROB_FLOOR, 1.0 - PROB_FLOOR))))
    return loss if on_tape else float(loss.value)
