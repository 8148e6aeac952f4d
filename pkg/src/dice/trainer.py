"""Joint objective and the alternating k-means / gradient training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .clustering import (
    align_labels,
    cluster_ce_loss,
    init_cluster_head,
    kmeans,
    one_hot,
    predict_cluster,
)
from .cohort import Cohort, DataError, Normalization, SplitCohort, Subject
from .numeric import AdamState, DivergenceError, adam_step, derive_seed, make_rng
from .representation import encode_batch, init_autoencoder_params, reconstruction_loss_batch
from .significance import (
    PenaltyHeads,
    SignificanceConfig,
    SignificanceResult,
    fit_logistic,
    membership_design,
    outcome_bce_loss,
    significance_matrix,
    significance_penalty,
)

log = logging.getLogger(__name__)

TRACE_COLUMNS = ["epoch", "outer_iter", "L_AE", "L_clustering", "L1", "L2", "penalty", "total", "eligible"]


class DimensionMismatchError(ValueError):
    pass


@dataclass
class DiceHyper:
    lambda_ae: float = 0.1
    lambda_cluster: float = 10.0
    lambda_outcome: float = 1.0
    lambda_sig: float = 1.0
    n_iter: int = 60
    n_epoch: int = 1
    alpha: float = 0.05
    lr: float = 1e-2
    batch_size: int = 32
    seed: int = 0
    kmeans_restarts: int = 10
    penalty_newton_steps: int = 5
    encoder: str = "auto"

    def __post_init__(self):
        for name in ("lambda_ae", "lambda_cluster", "lambda_outcome", "lambda_sig"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_iter < 1 or self.n_epoch < 1:
            raise ValueError("n_iter and n_epoch must be >= 1")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size must be >= 1 and lr > 0")
        if self.encoder not in ("auto", "lstm", "mlp"):
            raise ValueError("encoder must be auto, lstm or mlp")
        SignificanceConfig(self.alpha)

    @property
    def significance(self) -> SignificanceConfig:
        return SignificanceConfig(self.alpha)

    @property
    def alpha_g(self) -> float:
        return self.significance.alpha_g

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiceHyper":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown hyper-parameters: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "DiceHyper":
        return DiceHyper(**{**asdict(self), **changes})


@dataclass
class Prediction:
    z: np.ndarray
    soft: np.ndarray
    hard: np.ndarray
    prob: np.ndarray


@dataclass
class DiceModel:
    K: int
    d: int
    kind: str
    params: dict
    centers: np.ndarray
    outcome_coef: np.ndarray
    hyper: DiceHyper
    normalization: Normalization
    feature_names: tuple
    confounder_names: tuple
    train_ids: list = field(default_factory=list)
    train_hard: np.ndarray | None = None
    train_soft: np.ndarray | None = None
    train_outcome_ratio: np.ndarray | None = None
    significance: SignificanceResult | None = None
    trace: list = field(default_factory=list)
    label_changes: list = field(default_factory=list)

    @property
    def eligible(self) -> bool:
        return bool(self.significance is not None and self.significance.eligible)

    @property
    def n_features(self) -> int:
        return len(self.normalization.mean) + (1 if self.normalization.sequential else 0)

    def risk_ranks(self) -> np.ndarray:
        """Rank of each cluster by descending training outcome ratio (1 = highest risk)."""
        ratio = np.nan_to_num(self.train_outcome_ratio, nan=-1.0)
        order = sorted(range(self.K), key=lambda k: (-ratio[k], k))
        ranks = np.empty(self.K, dtype=int)
        ranks[order] = np.arange(1, self.K + 1)
        return ranks


def _kind_for(cohort: Cohort, requested: str) -> str:
    if requested != "auto":
        return requested
    return "lstm" if cohort.sequential else "mlp"


def init_params(kind: str, n_features: int, d: int, K: int, n_conf: int, rng) -> dict:
    params = init_autoencoder_params(kind, n_features, d, rng)
    params.update(init_cluster_head(d, K, rng))
    bound = 1.0 / math.sqrt(K + n_conf)
    params["out_W"] = rng.uniform(-bound, bound, size=(K + n_conf, 1))
    params["out_b"] = rng.uniform(-bound, bound, size=(1,))
    return params


def joint_loss(
    p: dict,
    kind: str,
    X: np.ndarray,
    lengths: np.ndarray,
    hard: np.ndarray,
    centers: np.ndarray,
    v: np.ndarray,
    y: np.ndarray,
    hyper: DiceHyper,
    heads: PenaltyHeads | None = None,
):
    """Weighted sum of reconstruction, clustering, cluster-classification,
    outcome and significance terms for one batch.

    Reconstruction is averaged over the batch; the other terms are batch
    sums, and the penalty uses the likelihood ratio of the batch itself.
    Centroids and hard memberships are constants here, but the clustering
    term still pulls ``z`` towards its assigned centroid.
    Returns (total, components).
    """
    l_ae, z = reconstruction_loss_batch(kind, p, X, lengths)
    l_clu = ad.sum(ad.square(ad.sub(z, hard @ centers)))
    soft = predict_cluster(z, p)
    l1 = cluster_ce_loss(hard, soft)
    design = ad.concat_columns([soft, v]) if v.shape[1] else soft
    y_hat = ad.sigmoid(ad.add(ad.matmul(design, p["out_W"]), p["out_b"]))
    l2 = outcome_bce_loss(y_hat, y[:, None])
    total = l_ae * hyper.lambda_ae + l_clu + l1 * hyper.lambda_cluster + l2 * hyper.lambda_outcome
    if heads is not None and hyper.lambda_sig > 0:
        pen = significance_penalty(soft, v, y, heads, hyper.significance)
        total = total + pen * hyper.lambda_sig
        pen_value = float(pen.value)
    else:
        pen_value = 0.0
    components = {
        "L_AE": float(l_ae.value),
        "L_clustering": float(l_clu.value),
        "L1": float(l1.value),
        "L2": float(l2.value),
        "penalty": pen_value,
    }
    return total, components


def combine_components(components: dict, hyper: DiceHyper) -> float:
    return (
        hyper.lambda_ae * components["L_AE"]
        + components["L_clustering"]
        + hyper.lambda_cluster * components["L1"]
        + hyper.lambda_outcome * components["L2"]
        + hyper.lambda_sig * components["penalty"]
    )


def _leaves(params: dict) -> dict:
    return {k: ad.Var(v, requires_grad=True) for k, v in params.items()}


def _grads(leaves: dict) -> dict:
    return {k: (np.zeros_like(v.value) if v.grad is None else v.grad) for k, v in leaves.items()}


def _batch(X, lengths, idx):
    L = int(lengths[idx].max())
    return X[idx, :L], lengths[idx]


def _encode_all(kind, params, X, lengths, chunk=512):
    out = [encode_batch(kind, params, *_batch(X, lengths, np.arange(s, min(s + chunk, len(X))))).value
           for s in range(0, len(X), chunk)]
    return np.vstack(out)


def _minibatches(n, size, rng):
    perm = rng.permutation(n)
    return [perm[s : s + size] for s in range(0, n, size)]


def train_dice(split: SplitCohort | Cohort, K: int, d: int, hyper: DiceHyper, ablate: bool = False) -> DiceModel:
    """Train one (K, d) architecture on the training split.

    Pretrain the autoencoder for one epoch, then alternate: k-means on the
    current representations (labels aligned to the previous round), then
    ``n_epoch`` epochs of joint gradient steps with the pseudo-labels as
    cluster-head targets. ``ablate`` drops the significance penalty.
    """
    train = split.train if isinstance(split, SplitCohort) else split
    if K < 2:
        raise ValueError("K must be at least 2")
    train.check_outcomes()
    if len(train) < K:
        raise DataError(f"training split has {len(train)} subjects, fewer than K={K}")
    if ablate:
        hyper = hyper.replace(lambda_sig=0.0)

    rng = make_rng(hyper.seed)
    kind = _kind_for(train, hyper.encoder)
    X, lengths = train.padded
    V = train.confounders
    y = train.outcomes
    P, m = len(train), V.shape[1]
    params = init_params(kind, train.n_features, d, K, m, rng)
    state = AdamState(lr=hyper.lr)
    trace: list[dict] = []
    config = hyper.significance

    # one epoch of reconstruction-only pretraining
    ae_sum, nb = 0.0, 0
    for idx in _minibatches(P, hyper.batch_size, rng):
        leaves = _leaves(params)
        loss, _ = reconstruction_loss_batch(kind, leaves, *_batch(X, lengths, idx))
        ad.backward(loss)
        grads = {k: g for k, g in _grads(leaves).items() if k.startswith(("enc_", "dec_"))}
        try:
            adam_step(params, grads, state)
        except DivergenceError:
            continue
        ae_sum += float(loss.value)
        nb += 1
    trace.append({"epoch": 0, "outer_iter": 0, "L_AE": ae_sum / max(nb, 1), "L_clustering": float("nan"),
                  "L1": float("nan"), "L2": float("nan"), "penalty": float("nan"), "total": float("nan"),
                  "eligible": False})

    Z = _encode_all(kind, params, X, lengths)
    heads = PenaltyHeads(K, m) if hyper.lambda_sig > 0 else None
    prev = None
    centers = None
    label_changes = []
    epoch = 0
    for it in range(1, hyper.n_iter + 1):
        km = kmeans(Z, K, seed=derive_seed(hyper.seed, 101, it), n_init=hyper.kmeans_restarts)
        labels, centers = km.labels, km.centers
        if prev is not None:
            perm = align_labels(labels, prev, K)
            labels = perm[labels]
            aligned = np.empty_like(centers)
            aligned[perm] = centers
            centers = aligned
            label_changes.append(float(np.mean(labels != prev)))
        prev = labels
        hard_all = one_hot(labels, K)
        if heads is not None:
            heads.refresh(predict_cluster(Z, params), V, y, steps=hyper.penalty_newton_steps)

        for _ in range(hyper.n_epoch):
            epoch += 1
            state.lr = hyper.lr
            sums = dict.fromkeys(["L_AE", "L_clustering", "L1", "L2", "penalty"], 0.0)
            nb = 0
            for idx in _minibatches(P, hyper.batch_size, rng):
                Xb, lb = _batch(X, lengths, idx)
                leaves = _leaves(params)
                total, comps = joint_loss(leaves, kind, Xb, lb, hard_all[idx], centers, V[idx], y[idx],
                                          hyper, heads)
                if not np.isfinite(total.value):
                    state.lr *= 0.5
                    continue
                ad.backward(total)
                try:
                    adam_step(params, _grads(leaves), state)
                except DivergenceError:
                    state.lr *= 0.5
                    continue
                for k in sums:
                    sums[k] += comps[k]
                nb += 1
            row = {k: s / max(nb, 1) for k, s in sums.items()}
            row["total"] = combine_components(row, hyper)
            Z = _encode_all(kind, params, X, lengths)
            cur = np.argmax(predict_cluster(Z, params), axis=1)
            row["eligible"] = significance_matrix(one_hot(cur, K), V, y, config).eligible
            row.update(epoch=epoch, outer_iter=it)
            trace.append(row)
        log.debug("K=%d d=%d iter %d: %s", K, d, it, trace[-1])

    soft = predict_cluster(Z, params)
    hard = np.argmax(soft, axis=1)
    C = one_hot(hard, K)
    head = fit_logistic(membership_design(C, V), y)
    sig = significance_matrix(C, V, y, config)
    counts = C.sum(axis=0)
    ratio = np.where(counts > 0, (C * y[:, None]).sum(axis=0) / np.maximum(counts, 1), np.nan)
    return DiceModel(
        K=K,
        d=d,
        kind=kind,
        params=params,
        centers=centers,
        outcome_coef=head.coef,
        hyper=hyper,
        normalization=train.normalization,
        feature_names=train.feature_names,
        confounder_names=train.confounder_names,
        train_ids=train.ids,
        train_hard=hard,
        train_soft=soft,
        train_outcome_ratio=ratio,
        significance=sig,
        trace=trace,
        label_changes=label_changes,
    )


def _prepare(model: DiceModel, data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(data, Subject):
        data = [data]
    if isinstance(data, Cohort):
        subjects = data.subjects
    else:
        subjects = list(data)
    n_raw = len(model.normalization.mean)
    events = []
    for s in subjects:
        if s.features.shape[1] != n_raw:
            raise DimensionMismatchError(
                f"subject {s.id}: {s.features.shape[1]} features, model was trained with {n_raw}"
            )
        if s.confounders.shape[0] != len(model.confounder_names):
            raise DimensionMismatchError(
                f"subject {s.id}: {s.confounders.shape[0]} confounders, model expects {len(model.confounder_names)}"
            )
        events.append(model.normalization.transform(s))
    lengths = np.array([e.shape[0] for e in events], dtype=int)
    X = np.zeros((len(events), int(lengths.max()), model.n_features))
    for i, e in enumerate(events):
        X[i, : lengths[i]] = e
    V = np.vstack([s.confounders for s in subjects]).reshape(len(subjects), -1)
    return X, lengths, V


def predict(model: DiceModel, data) -> Prediction:
    """Representation, soft/hard membership and outcome probability.

    ``data`` is a Subject, a Cohort or a list of subjects; features are
    normalized with the model's training statistics.
    """
    X, lengths, V = _prepare(model, data)
    Z = _encode_all(model.kind, model.params, X, lengths)
    soft = predict_cluster(Z, model.params)
    hard = np.argmax(soft, axis=1)
    prob = 1.0 / (1.0 + np.exp(-(membership_design(one_hot(hard, model.K), V) @ model.outcome_coef)))
    return Prediction(z=Z, soft=soft, hard=hard, prob=prob)


def encode_cohort(model: DiceModel, data) -> np.ndarray:
    X, lengths, _ = _prepare(model, data)
    return _encode_all(model.kind, model.params, X, lengths)
