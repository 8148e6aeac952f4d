"""Clustering indices, outcome classification metrics, subgroup AUCs, outcome
ratios per cluster, the k-means baselines and a PCA projection for plots."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import comb
from scipy.stats import rankdata

from . import autodiff as ad
from .clustering import assign_to_centers, kmeans, one_hot
from .cohort import Cohort, SplitCohort
from .numeric import AdamState, DivergenceError, adam_step, derive_seed, make_rng
from .representation import encode_batch, init_autoencoder_params, reconstruction_loss_batch
from .significance import fit_logistic, membership_design, outcome_bce_loss, significance_matrix

BASELINES = ("pca_kmeans", "ae_kmeans", "ae_class_kmeans")


# --- clustering indices --------------------------------------------------

@dataclass
class ClusterIndices:
    silhouette: float
    calinski_harabasz: float
    davies_bouldin: float


def _pairwise(Z):
    sq = ((Z[:, None, :] - Z[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(sq)


def silhouette_score(Z, labels) -> float:
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    D = _pairwise(Z)
    uniq = np.unique(labels)
    masks = [labels == u for u in uniq]
    sizes = np.array([m.sum() for m in masks])
    sums = np.column_stack([D[:, m].sum(axis=1) for m in masks])  # (n, K)
    own = np.searchsorted(uniq, labels)
    n = len(labels)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(n), own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes
    means[np.arange(n), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def calinski_harabasz_score(Z, labels) -> float:
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    n, K = len(Z), len(uniq)
    center = Z.mean(axis=0)
    between = within = 0.0
    for u in uniq:
        members = Z[labels == u]
        mu = members.mean(axis=0)
        between += len(members) * float(((mu - center) ** 2).sum())
        within += float(((members - mu) ** 2).sum())
    if within == 0.0:
        return 1.0
    return (between / (K - 1)) / (within / (n - K))


def davies_bouldin_score(Z, labels) -> float:
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    centers = np.array([Z[labels == u].mean(axis=0) for u in uniq])
    scatter = np.array([np.sqrt(((Z[labels == u] - centers[i]) ** 2).sum(axis=1)).mean() for i, u in enumerate(uniq)])
    sep = _pairwise(centers)
    K = len(uniq)
    worst = np.empty(K)
    for i in range(K):
        ratios = [(scatter[i] + scatter[j]) / sep[i, j] if sep[i, j] > 0 else np.inf for j in range(K) if j != i]
        worst[i] = max(ratios)
    return float(worst.mean())


def clustering_indices(Z, labels) -> ClusterIndices:
    """Silhouette, Calinski-Harabasz and Davies-Bouldin with Euclidean distances."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    n_labels = len(np.unique(labels))
    if Z.shape[0] < 3:
        raise ValueError("need at least 3 points")
    if n_labels < 2:
        raise ValueError("need at least 2 nonempty clusters")
    if n_labels >= Z.shape[0]:
        raise ValueError("need fewer clusters than points")
    return ClusterIndices(
        silhouette=silhouette_score(Z, labels),
        calinski_harabasz=calinski_harabasz_score(Z, labels),
        davies_bouldin=davies_bouldin_score(Z, labels),
    )


def adjusted_rand_index(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    n = len(a)
    index = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(n, 2)
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


# --- classification metrics ----------------------------------------------

def roc_auc(scores, y) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie), via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both outcome classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class ClassificationReport:
    auc: float | None
    acc: float | None
    fpr: float | None
    tpr: float | None
    fnr: float | None
    tnr: float | None
    ppv: float | None
    npv: float | None
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den):
    return None if den == 0 else num / den


def confusion_metrics(scores, y, threshold: float = 0.5) -> ClassificationReport:
    """Hard predictions ``score >= threshold``; undefined ratios are None."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y).astype(int)
    pred = (scores >= threshold).astype(int)
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    tn = int(((pred == 0) & (y == 0)).sum())
    try:
        auc = roc_auc(scores, y)
    except ValueError:
        auc = None
    return ClassificationReport(
        auc=auc,
        acc=_ratio(tp + tn, len(y)),
        fpr=_ratio(fp, fp + tn),
        tpr=_ratio(tp, tp + fn),
        fnr=_ratio(fn, tp + fn),
        tnr=_ratio(tn, fp + tn),
        ppv=_ratio(tp, tp + fp),
        npv=_ratio(tn, tn + fn),
        threshold=threshold,
    )


def subgroup_auc(scores, y, groups) -> dict:
    """AUC within each subgroup; groups lacking an outcome class are flagged and skipped."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    groups = np.asarray(["" if g is None else str(g) for g in groups])
    table = {}
    for g in sorted(set(groups.tolist())):
        m = groups == g
        yg = y[m]
        if yg.min() == yg.max():
            table[g] = {"auc": None, "n": int(m.sum()), "skipped": True}
        else:
            table[g] = {"auc": roc_auc(scores[m], yg), "n": int(m.sum()), "skipped": False}
    return table


@dataclass
class OutcomeRatios:
    ratios: list
    sizes: list
    spread: float


def outcome_ratio_by_cluster(labels, y, K: int | None = None) -> OutcomeRatios:
    """Mean outcome per cluster, cluster sizes and the max-min spread over nonempty clusters."""
    labels = np.asarray(labels, dtype=int)
    y = np.asarray(y, dtype=np.float64)
    K = int(labels.max()) + 1 if K is None else K
    sizes = np.bincount(labels, minlength=K)
    sums = np.bincount(labels, weights=y, minlength=K)
    ratios = [float(sums[k] / sizes[k]) if sizes[k] else None for k in range(K)]
    present = [r for r in ratios if r is not None]
    return OutcomeRatios(ratios=ratios, sizes=sizes.tolist(), spread=float(max(present) - min(present)))


# --- projection ----------------------------------------------------------

@dataclass
class Projection:
    coords: np.ndarray
    explained_variance_ratio: np.ndarray
    components: np.ndarray
    mean: np.ndarray

    def transform(self, Z) -> np.ndarray:
        return (np.asarray(Z, dtype=np.float64) - self.mean) @ self.components.T


def pca_project(Z, dims: int = 2) -> Projection:
    """Centered projection on the top principal directions.

    Each direction's largest-magnitude loading is made positive so results
    do not depend on the SVD's arbitrary signs.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[0] < 2:
        raise ValueError("need at least 2 points")
    mean = Z.mean(axis=0)
    X = Z - mean
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    comps = vt[:dims]
    if comps.shape[0] < dims:
        comps = np.vstack([comps, np.zeros((dims - comps.shape[0], Z.shape[1]))])
    for i in range(comps.shape[0]):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    var = s**2
    total = var.sum()
    ratio = np.zeros(dims)
    k = min(dims, len(var))
    if total > 0:
        ratio[:k] = var[:k] / total
    return Projection(coords=X @ comps.T, explained_variance_ratio=ratio, components=comps, mean=mean)


# --- reports -------------------------------------------------------------

@dataclass
class EvalReport:
    method: str
    K: int
    d: int
    n_test: int
    clustering: dict | None
    classification_membership: dict
    classification_representation: dict
    outcome_ratios: dict
    eligible: bool
    significance: dict
    subgroup_auc: dict
    ari_test: float | None = None
    selected: dict | None = None
    extra: dict = field(default_factory=dict)
    test_z: np.ndarray | None = field(default=None, repr=False)
    test_labels: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("test_z", "test_labels")}
        return _jsonable(out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def evaluate_labels(
    method: str,
    K: int,
    d: int,
    split: SplitCohort,
    z_train: np.ndarray,
    labels_train: np.ndarray,
    z_test: np.ndarray,
    labels_test: np.ndarray,
    alpha: float = 0.05,
) -> EvalReport:
    """Shared test-split report for any (representation, labeling) pair."""
    from .significance import SignificanceConfig

    train, test = split.train, split.test
    y_tr, y_te = train.outcomes, test.outcomes
    v_tr, v_te = train.confounders, test.confounders

    try:
        indices = asdict(clustering_indices(z_test, labels_test))
    except ValueError:
        indices = None

    member_head = fit_logistic(membership_design(one_hot(labels_train, K), v_tr), y_tr)
    member_scores = member_head.predict_proba(membership_design(one_hot(labels_test, K), v_te))
    repr_head = fit_logistic(np.column_stack([z_train, v_tr, np.ones(len(train))]), y_tr)
    repr_scores = repr_head.predict_proba(np.column_stack([z_test, v_te, np.ones(len(test))]))

    sig = significance_matrix(one_hot(labels_train, K), v_tr, y_tr, SignificanceConfig(alpha))
    ratios = outcome_ratio_by_cluster(labels_test, y_te, K)
    planted = test.planted
    return EvalReport(
        method=method,
        K=K,
        d=d,
        n_test=len(test),
        clustering=indices,
        classification_membership=confusion_metrics(member_scores, y_te).to_dict(),
        classification_representation=confusion_metrics(repr_scores, y_te).to_dict(),
        outcome_ratios=asdict(ratios),
        eligible=sig.eligible,
        significance=sig.to_dict(),
        subgroup_auc=subgroup_auc(member_scores, y_te, test.subgroups) if any(test.subgroups) else {},
        ari_test=None if planted is None else adjusted_rand_index(planted, labels_test),
        test_z=z_test,
        test_labels=labels_test,
    )


def evaluate_dice(model, split: SplitCohort) -> EvalReport:
    from .trainer import encode_cohort, predict

    pt = predict(model, split.test)
    report = evaluate_labels(
        "dice", model.K, model.d, split,
        encode_cohort(model, split.train), model.train_hard, pt.z, pt.hard, model.hyper.alpha,
    )
    # the finalized head is the model's own predictor; report its test metrics
    report.classification_membership = confusion_metrics(pt.prob, split.test.outcomes).to_dict()
    report.selected = {"K": model.K, "d": model.d}
    return report


# --- baselines -----------------------------------------------------------

@dataclass(frozen=True)
class BaselineSpec:
    method: str
    K: int
    d: int

    def __post_init__(self):
        if self.method not in BASELINES:
            raise ValueError(f"unknown baseline {self.method!r}; choose from {', '.join(BASELINES)}")


def _flatten(cohort: Cohort, width: int) -> np.ndarray:
    X, lengths = cohort.padded
    X = X[:, :width]
    if X.shape[1] < width:
        X = np.concatenate([X, np.zeros((X.shape[0], width - X.shape[1], X.shape[2]))], axis=1)
    return X.reshape(len(cohort), -1)


def _train_ae(split: SplitCohort, d: int, hyper, with_outcome: bool, seed: int):
    """Autoencoder trained for as many epochs as DICE runs, optionally jointly
    with a logistic outcome head on [z, v]."""
    train = split.train
    rng = make_rng(seed)
    kind = "lstm" if train.sequential else "mlp"
    if hyper.encoder != "auto":
        kind = hyper.encoder
    X, lengths = train.padded
    V, y = train.confounders, train.outcomes
    params = init_autoencoder_params(kind, train.n_features, d, rng)
    if with_outcome:
        bound = 1.0 / np.sqrt(d + V.shape[1])
        params["out_W"] = rng.uniform(-bound, bound, size=(d + V.shape[1], 1))
        params["out_b"] = rng.uniform(-bound, bound, size=(1,))
    state = AdamState(lr=hyper.lr)
    epochs = 1 + hyper.n_iter * hyper.n_epoch
    for _ in range(epochs):
        perm = rng.permutation(len(train))
        for s in range(0, len(train), hyper.batch_size):
            idx = perm[s : s + hyper.batch_size]
            L = int(lengths[idx].max())
            leaves = {k: ad.Var(v, requires_grad=True) for k, v in params.items()}
            l_ae, z = reconstruction_loss_batch(kind, leaves, X[idx, :L], lengths[idx])
            total = l_ae * (hyper.lambda_ae if with_outcome else 1.0)
            if with_outcome:
                design = ad.concat_columns([z, V[idx]]) if V.shape[1] else z
                y_hat = ad.sigmoid(ad.add(ad.matmul(design, leaves["out_W"]), leaves["out_b"]))
                total = total + outcome_bce_loss(y_hat, y[idx, None]) * hyper.lambda_outcome
            ad.backward(total)
            grads = {k: (np.zeros_like(v.value) if v.grad is None else v.grad) for k, v in leaves.items()}
            try:
                adam_step(params, grads, state)
            except DivergenceError:
                state.lr *= 0.5
    return kind, params


def _encode(kind, params, cohort: Cohort) -> np.ndarray:
    X, lengths = cohort.padded
    return encode_batch(kind, params, X, lengths).value


def run_baseline(split: SplitCohort, spec: BaselineSpec, hyper) -> EvalReport:
    """Fit one baseline on the training split and report on the test split."""
    seed = derive_seed(hyper.seed, BASELINES.index(spec.method) + 1, spec.K, spec.d)
    if spec.method == "pca_kmeans":
        width = int(split.train.padded[1].max())
        flat_train = _flatten(split.train, width)
        dims = min(spec.d, flat_train.shape[1], len(split.train) - 1)
        proj = pca_project(flat_train, dims)
        z_train = proj.coords
        z_test = proj.transform(_flatten(split.test, width))
    else:
        kind, params = _train_ae(split, spec.d, hyper, with_outcome=spec.method == "ae_class_kmeans", seed=seed)
        z_train = _encode(kind, params, split.train)
        z_test = _encode(kind, params, split.test)
    km = kmeans(z_train, spec.K, seed=seed, n_init=hyper.kmeans_restarts)
    labels_test = assign_to_centers(z_test, km.centers)
    report = evaluate_labels(spec.method, spec.K, spec.d, split, z_train, km.labels, z_test, labels_test, hyper.alpha)
    report.selected = {"K": spec.K, "d": spec.d}
    return report
