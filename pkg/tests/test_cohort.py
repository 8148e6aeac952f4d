import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_subject
from dice.clustering import kmeans
from dice.evaluation import adjusted_rand_index
from dice.cohort import (
    Cohort,
    DataError,
    GeneratorSpec,
    _largest_remainder,
    load_cohort,
    split_cohort,
    synth_cohort,
    write_cohort,
)


def _write(tmp_path, features, outcomes):
    f = tmp_path / "features.csv"
    o = tmp_path / "outcomes.csv"
    f.write_text(features)
    o.write_text(outcomes)
    return f, o


def _six_subject_files(tmp_path):
    feats = ["subject_id,day,a,b,c"]
    outs = ["subject_id,outcome,age"]
    for i in range(6):
        for day in (0, 3):
            feats.append(f"p{i},{day},{i},{day * 0.5},{i * day}")
        outs.append(f"p{i},{i % 2},{40 + i}")
    return _write(tmp_path, "\n".join(feats) + "\n", "\n".join(outs) + "\n")


def test_load_six_subjects(tmp_path):
    cohort = load_cohort(*_six_subject_files(tmp_path))
    assert len(cohort) == 6
    assert cohort.n_features == 4
    assert cohort.sequential
    assert cohort.events(0).shape == (2, 4)
    assert cohort.events(0)[:, -1].tolist() == [0.0, 1.0]


def test_events_sorted_by_day(tmp_path):
    f, o = _write(tmp_path, "subject_id,day,a\nx,5,2\nx,1,1\ny,0,3\n", "subject_id,outcome\nx,1\ny,0\n")
    cohort = load_cohort(f, o)
    assert cohort.subjects[0].days.tolist() == [1.0, 5.0]
    assert cohort.subjects[0].features[:, 0].tolist() == [1.0, 2.0]


def test_bad_outcome_names_line(tmp_path):
    f, o = _write(tmp_path, "subject_id,day,a\nx,0,1\ny,0,2\nz,0,3\n",
                  "subject_id,outcome\nx,1\ny,0\nz,2\n")
    with pytest.raises(DataError, match=r"outcomes.csv:4"):
        load_cohort(f, o)


def test_empty_file(tmp_path):
    f, o = _write(tmp_path, "", "subject_id,outcome\n")
    with pytest.raises(DataError, match="no subjects"):
        load_cohort(f, o)


@pytest.mark.parametrize(
    "features,outcomes,pattern",
    [
        ("subject_id,day,a\nx,0,1\ny,0\n", "subject_id,outcome\nx,1\ny,0\n", r"features.csv:3"),
        ("subject_id,day,a\nx,0,1\ny,0,2\n", "subject_id,outcome\nx,1\n", "missing from"),
        ("subject_id,day,a\nx,0,1\n", "subject_id,outcome\nx,1\nw,0\n", "no feature rows"),
        ("subject_id,day,a\nx,0,1\nx,0,2\ny,0,1\n", "subject_id,outcome\nx,1\ny,0\n", "duplicate days"),
        ("subject_id,day,a\nx,0,abc\n", "subject_id,outcome\nx,1\n", "not a number"),
        ("id,day,a\nx,0,1\n", "subject_id,outcome\nx,1\n", "header"),
        ("subject_id,day,a\nx,0,1\ny,0,1\n", "subject_id,outcome\nx,1\ny,1\n", "each outcome class"),
    ],
)
def test_malformed_inputs(tmp_path, features, outcomes, pattern):
    with pytest.raises(DataError, match=pattern):
        load_cohort(*_write(tmp_path, features, outcomes))


def test_write_then_load_round_trip(tmp_path):
    cohort = synth_cohort(GeneratorSpec(per_cluster=5), seed=1)
    write_cohort(cohort, tmp_path / "f.csv", tmp_path / "o.csv")
    back = load_cohort(tmp_path / "f.csv", tmp_path / "o.csv")
    assert back.ids == cohort.ids
    for a, b in zip(back.subjects, cohort.subjects):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.confounders, b.confounders)
        assert a.outcome == b.outcome and a.subgroup == b.subgroup


def test_split_sizes():
    cohort = Cohort([make_subject(f"s{i}", [[i]], outcome=i % 2) for i in range(12)], ["a"], ["c"])
    split = split_cohort(cohort, seed=0)
    assert (len(split.train), len(split.validation), len(split.test)) == (8, 2, 2)
    assert _largest_remainder(1002, (4, 1, 1)) == [668, 167, 167]


def test_split_deterministic_and_too_small():
    cohort = synth_cohort(GeneratorSpec(per_cluster=10), seed=0)
    a, b = split_cohort(cohort, seed=4), split_cohort(cohort, seed=4)
    assert a.train.ids == b.train.ids and a.test.ids == b.test.ids
    tiny = Cohort([make_subject(f"s{i}", [[i]], outcome=i % 2) for i in range(5)], ["a"], ["c"])
    with pytest.raises(DataError):
        split_cohort(tiny)


@settings(max_examples=25, deadline=None)
@given(st.integers(6, 80), st.integers(0, 10**6))
def test_split_partitions(n, seed):
    cohort = Cohort([make_subject(f"s{i}", [[i]], outcome=i % 2) for i in range(n)], ["a"], ["c"])
    split = split_cohort(cohort, seed=seed)
    parts = [split.train.ids, split.validation.ids, split.test.ids]
    flat = [i for p in parts for i in p]
    assert sorted(flat) == sorted(cohort.ids) and len(set(flat)) == n
    for part, ratio in zip(parts, (4, 1, 1)):
        assert abs(len(part) - n * ratio / 6) <= 1


def test_training_normalization_is_standardized():
    cohort = synth_cohort(GeneratorSpec(per_cluster=30), seed=2)
    split = split_cohort(cohort, seed=2)
    X, lengths = split.train.padded
    rows = np.vstack([X[i, : lengths[i], :-1] for i in range(len(lengths))])
    assert np.allclose(rows.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(rows.std(axis=0), 1.0, atol=1e-9)
    days = np.concatenate([X[i, : lengths[i], -1] for i in range(len(lengths))])
    assert days.min() == 0.0 and days.max() <= 1.0


def test_constant_feature_gets_unit_std():
    subjects = [make_subject(f"s{i}", [[1.0, i]], outcome=i % 2) for i in range(4)]
    cohort = Cohort(subjects, ["const", "x"], ["c"])
    assert cohort.normalization.std[0] == 1.0
    assert np.all(cohort.padded[0][:, 0, 0] == 0.0)


def test_synth_outcome_ratios_and_determinism():
    cohort = synth_cohort(GeneratorSpec(), seed=0)
    assert len(cohort) == 600
    planted, y = cohort.planted, cohort.outcomes
    for k, p in enumerate((0.8, 0.4, 0.1)):
        assert abs(y[planted == k].mean() - p) <= 0.07
    again = synth_cohort(GeneratorSpec(), seed=0)
    assert all(np.array_equal(a.features, b.features) for a, b in zip(cohort.subjects, again.subjects))
    other = synth_cohort(GeneratorSpec(), seed=1)
    assert not np.array_equal(cohort.subjects[0].features, other.subjects[0].features)


def test_synth_separation_zero_means_indistinguishable():
    cohort = synth_cohort(GeneratorSpec(separation=0.0), seed=0)
    Z = np.vstack([s.features.mean(axis=0) for s in cohort.subjects])
    labels = kmeans(Z, 3, seed=0).labels
    assert abs(adjusted_rand_index(cohort.planted, labels)) < 0.05


@pytest.mark.parametrize("bad", [{"outcome_probs": [0.8, 1.0, 0.1]}, {"k_true": 2}, {"colour": 1}, {"seq_len_min": 0}])
def test_generator_validation(bad):
    with pytest.raises(DataError):
        synth_cohort(bad)
