import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dice.cohort import GeneratorSpec, split_cohort, synth_cohort
from dice.evaluation import (
    BaselineSpec,
    adjusted_rand_index,
    clustering_indices,
    confusion_metrics,
    outcome_ratio_by_cluster,
    pca_project,
    roc_auc,
    run_baseline,
    subgroup_auc,
)
from dice.trainer import DiceHyper
from oracles import auc_pairs, calinski_harabasz_loops, davies_bouldin_loops, silhouette_loops

SQUARE = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])


def test_four_point_indices():
    idx = clustering_indices(SQUARE, [1, 1, 2, 2])
    assert idx.silhouette == pytest.approx(0.9002, abs=5e-5)
    assert idx.calinski_harabasz == pytest.approx(200.0, abs=1e-9)
    assert idx.davies_bouldin == pytest.approx(0.1, abs=1e-12)
    assert idx.silhouette == pytest.approx(silhouette_loops(SQUARE, [1, 1, 2, 2]), abs=1e-12)


def index_fixtures(count=120):
    for s in range(count):
        rng = np.random.default_rng(s)
        n = int(rng.integers(3, 13))
        K = int(rng.integers(2, min(4, n - 1) + 1))
        Z = rng.normal(size=(n, int(rng.integers(1, 4))))
        labels = np.concatenate([np.arange(K), rng.integers(0, K, size=n - K)])
        yield Z, labels


def test_indices_match_brute_force():
    for Z, labels in index_fixtures():
        idx = clustering_indices(Z, labels)
        assert idx.silhouette == pytest.approx(silhouette_loops(Z, labels), abs=1e-9)
        assert idx.calinski_harabasz == pytest.approx(calinski_harabasz_loops(Z, labels), abs=1e-9)
        assert idx.davies_bouldin == pytest.approx(davies_bouldin_loops(Z, labels), abs=1e-9)


def test_arbitrary_split_of_coincident_clusters():
    # two copies of the same three points; splitting by copy is meaningless
    base = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    Z = np.vstack([base, base])
    sil = clustering_indices(Z, [0, 0, 0, 1, 1, 1]).silhouette
    assert sil <= 0.0
    assert sil == pytest.approx(silhouette_loops(Z, [0, 0, 0, 1, 1, 1]), abs=1e-12)


@given(st.permutations([0, 1, 2]))
def test_indices_label_invariant(perm):
    Z = np.random.default_rng(0).normal(size=(9, 2))
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    a = clustering_indices(Z, labels)
    b = clustering_indices(Z, np.array(perm)[labels])
    assert a == b or all(np.isclose(x, y, atol=1e-12) for x, y in zip(vars(a).values(), vars(b).values()))


def test_silhouette_prefers_true_labels():
    rng = np.random.default_rng(4)
    Z = np.vstack([rng.normal(size=(20, 2)), rng.normal(size=(20, 2)) + 8.0])
    truth = np.repeat([0, 1], 20)
    random = rng.permutation(truth)
    assert clustering_indices(Z, truth).silhouette > clustering_indices(Z, random).silhouette


def test_indices_need_two_clusters():
    with pytest.raises(ValueError):
        clustering_indices(SQUARE, [0, 0, 0, 0])


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_matches_pair_counting():
    for s in range(200):
        rng = np.random.default_rng(s)
        n = int(rng.integers(2, 30))
        y = rng.integers(0, 2, size=n)
        y[0], y[-1] = 0, 1
        scores = rng.integers(0, 6, size=n) / 5.0  # coarse grid forces ties
        assert roc_auc(scores, y) == auc_pairs(scores, y)


labelled = st.lists(st.tuples(st.integers(-1000, 1000), st.integers(0, 1)), min_size=2, max_size=40).filter(
    lambda rows: len({t for _, t in rows}) == 2
)


@given(labelled)
def test_auc_monotone_invariance_and_complement(rows):
    scores = np.array([s for s, _ in rows], dtype=float)
    y = np.array([t for _, t in rows])
    auc = roc_auc(scores, y)
    assert roc_auc(np.exp(scores / 1e3) * 3 + 1, y) == pytest.approx(auc, abs=1e-12)
    assert auc + roc_auc(scores, 1 - y) == pytest.approx(1.0, abs=1e-12)


def test_confusion_examples():
    y = np.array([1, 0, 1, 0])
    r = confusion_metrics(y.astype(float), y)
    assert (r.acc, r.tpr, r.fpr, r.ppv, r.npv) == (1.0, 1.0, 0.0, 1.0, 1.0)
    r = confusion_metrics(1.0 - y, y)
    assert (r.acc, r.tpr, r.fpr) == (0.0, 0.0, 1.0)
    y = np.array([1, 1, 1, 0] + [0] * 6)
    scores = np.array([0.9, 0.8, 0.2, 0.7] + [0.1] * 6)
    r = confusion_metrics(scores, y)
    assert r.acc == pytest.approx(0.8)
    assert r.tpr == pytest.approx(2 / 3) and r.fpr == pytest.approx(1 / 7)
    assert r.ppv == pytest.approx(2 / 3) and r.npv == pytest.approx(6 / 7)
    assert confusion_metrics(np.zeros(3), np.array([0, 0, 0])).ppv is None


def test_subgroup_examples():
    rng = np.random.default_rng(0)
    scores, y = rng.random(30), np.tile([0, 1, 1], 10)
    table = subgroup_auc(scores, y, ["A"] * 30)
    assert table["A"]["auc"] == roc_auc(scores, y)
    table = subgroup_auc(scores, y, ["A"] * 27 + ["B"] * 3)
    assert subgroup_auc([0.3, 0.4], [1, 1], ["C", "C"])["C"]["skipped"]
    s2, y2 = np.concatenate([scores[:10], scores[:10]]), np.concatenate([y[:10], y[:10]])
    table = subgroup_auc(s2, y2, ["A"] * 10 + ["B"] * 10)
    assert table["A"]["auc"] == table["B"]["auc"]


def test_outcome_ratio_examples():
    r = outcome_ratio_by_cluster([0, 1, 1, 2], [1, 1, 1, 1])
    assert r.ratios == [1.0, 1.0, 1.0] and r.spread == 0.0
    labels = np.repeat([0, 1], 10)
    y = np.concatenate([np.arange(10) < 8, np.arange(10) < 1]).astype(float)
    assert outcome_ratio_by_cluster(labels, y).spread == pytest.approx(0.7)
    labels = np.repeat([0, 1, 2], 10)
    y = np.concatenate([np.arange(10) < 3, np.arange(10) < 3, np.arange(10) < 9]).astype(float)
    merged = outcome_ratio_by_cluster(np.where(labels == 1, 0, labels), y, K=3)
    assert merged.ratios[0] == pytest.approx(0.3) and merged.ratios[1] is None


def test_ari():
    a = [0, 0, 1, 1, 2, 2]
    assert adjusted_rand_index(a, [5, 5, 7, 7, 9, 9]) == 1.0
    assert adjusted_rand_index(a, [0, 1, 0, 1, 0, 1]) < 0.0


def test_pca_examples():
    rng = np.random.default_rng(0)
    Z = np.column_stack([rng.normal(size=50) * 5, rng.normal(size=50)])
    Z -= Z.mean(axis=0)
    Z[:, 1] -= np.polyval(np.polyfit(Z[:, 0], Z[:, 1], 1), Z[:, 0])  # decorrelate exactly
    proj = pca_project(Z)
    assert np.allclose(np.abs(proj.coords), np.abs(Z), atol=1e-9)
    rank1 = np.outer(rng.normal(size=20), [1.0, 2.0, -1.0])
    assert pca_project(rank1).explained_variance_ratio[1] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 30), st.integers(1, 5))
def test_pca_ratios(seed, n, dim):
    Z = np.random.default_rng(seed).normal(size=(n, dim))
    ratio = pca_project(Z).explained_variance_ratio
    assert ratio.sum() <= 1.0 + 1e-12 and ratio[0] >= ratio[1] - 1e-12 and np.all(ratio >= 0)


def test_pca_kmeans_recovers_separable_fixture():
    split = split_cohort(synth_cohort(GeneratorSpec(per_cluster=60, separation=12.0), seed=0), seed=0)
    rep = run_baseline(split, BaselineSpec("pca_kmeans", 3, 4), DiceHyper())
    assert rep.ari_test == pytest.approx(1.0)


def test_ae_kmeans_without_signal_has_small_spread():
    split = split_cohort(synth_cohort(GeneratorSpec(per_cluster=150, separation=0.0, outcome_probs=[0.4, 0.4, 0.4]),
                                      seed=0), seed=0)
    rep = run_baseline(split, BaselineSpec("ae_kmeans", 3, 4), DiceHyper(n_iter=3))
    # three test clusters of ~25 subjects: binomial noise allows about +-0.2 each
    assert rep.outcome_ratios["spread"] < 0.4


def test_baselines_deterministic(small_split):
    hyper = DiceHyper(n_iter=2)
    for name in ("pca_kmeans", "ae_kmeans", "ae_class_kmeans"):
        a = run_baseline(small_split, BaselineSpec(name, 3, 4), hyper).to_dict()
        b = run_baseline(small_split, BaselineSpec(name, 3, 4), hyper).to_dict()
        assert a == b
    with pytest.raises(ValueError):
        BaselineSpec("tsne", 3, 4)
