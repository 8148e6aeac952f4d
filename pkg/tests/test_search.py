import numpy as np
import pytest

from dice.search import (
    Candidate,
    NoEligibleCandidateError,
    SearchSpace,
    candidate_report,
    grid_search,
    select_candidate,
)
from dice.trainer import DiceHyper


def cand(K, d, auc, eligible=True):
    return Candidate(K=K, d=d, seed=0, auc_val=auc, auc_val_repr=auc, eligible=eligible, val_eligible=eligible, max_p=0.0)


def test_selection_skips_ineligible():
    pool = [cand(2, 8, 0.70), cand(3, 8, 0.80), cand(4, 8, 0.85, eligible=False)]
    assert (select_candidate(pool).K, select_candidate(pool).d) == (3, 8)
    assert select_candidate(pool, gate=False).K == 4


def test_selection_tie_breaks_small():
    pool = [cand(3, 8, 0.8), cand(2, 16, 0.8), cand(2, 8, 0.8)]
    assert (select_candidate(pool).K, select_candidate(pool).d) == (2, 8)
    assert select_candidate([cand(2, 8, 0.9, eligible=False)]) is None
    assert select_candidate([cand(2, 8, float("nan"))]) is None


def test_search_space_validation():
    assert SearchSpace((4, 2, 2), (16, 8)).grid() == [(2, 8), (2, 16), (4, 8), (4, 16)]
    with pytest.raises(ValueError):
        SearchSpace((1,), (8,))
    with pytest.raises(ValueError):
        SearchSpace((), (8,))


@pytest.fixture(scope="module")
def searched(small_split):
    hyper = DiceHyper(n_iter=12)
    return grid_search(small_split, SearchSpace((2, 3), (4,)), hyper), hyper


def test_report_shape(searched):
    result, _ = searched
    rows = candidate_report(result)
    assert [(r["K"], r["d"]) for r in rows] == [(2, 4), (3, 4)]
    assert sum(r["selected"] == "yes" for r in rows) == 1
    eligible = [c for c in result.candidates if c.eligible]
    assert result.selected.eligible
    assert max(c.auc_val for c in eligible) >= result.selected.auc_val
    assert result.selected.auc_val == max(c.auc_val for c in eligible)


def test_search_deterministic_and_parallel(searched, small_split):
    result, hyper = searched
    again = grid_search(small_split, SearchSpace((2, 3), (4,)), hyper, workers=2)
    assert candidate_report(result, timing=False) == candidate_report(again, timing=False)
    for a, b in zip(result.candidates, again.candidates):
        assert np.array_equal(a.model.centers, b.model.centers)


def test_no_eligible_carries_table(small_split):
    # no cluster of ~100 training subjects reaches p < 1e-30
    hyper = DiceHyper(n_iter=1, alpha=1e-30)
    with pytest.raises(NoEligibleCandidateError) as info:
        grid_search(small_split, SearchSpace((2,), (4,)), hyper)
    rows = candidate_report(info.value.candidates)
    assert len(rows) == 1 and rows[0]["eligible"] == "no" and rows[0]["selected"] == "no"


def test_ablated_search_has_extra_column(small_split):
    result = grid_search(small_split, SearchSpace((2,), (4,)), DiceHyper(n_iter=2), ablate=True)
    row = candidate_report(result)[0]
    assert row["would_be_eligible"] in ("yes", "no") and row["selected"] == "yes"
