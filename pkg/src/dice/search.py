"""Exhaustive (K, d) grid search gated by the significance constraint and
ranked by validation AUC."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clustering import one_hot
from .cohort import SplitCohort
from .evaluation import roc_auc
from .numeric import derive_seed
from .significance import fit_logistic, significance_matrix
from .trainer import DiceHyper, DiceModel, encode_cohort, predict, train_dice

log = logging.getLogger(__name__)

CANDIDATE_COLUMNS = ["K", "d", "auc_val", "eligible", "selected", "seconds"]


class NoEligibleCandidateError(RuntimeError):
    """No architecture met the significance constraint; ``candidates`` holds the full table."""

    def __init__(self, candidates):
        super().__init__(f"none of {len(candidates)} candidates met the significance constraint")
        self.candidates = candidates


@dataclass(frozen=True)
class SearchSpace:
    ks: tuple
    ds: tuple

    def __post_init__(self):
        if not self.ks or not self.ds:
            raise ValueError("search space must be nonempty")
        if any(int(k) < 2 for k in self.ks) or any(int(d) < 1 for d in self.ds):
            raise ValueError("need K >= 2 and d >= 1")
        object.__setattr__(self, "ks", tuple(sorted({int(k) for k in self.ks})))
        object.__setattr__(self, "ds", tuple(sorted({int(d) for d in self.ds})))

    def grid(self):
        return [(k, d) for k in self.ks for d in self.ds]


@dataclass
class Candidate:
    K: int
    d: int
    seed: int
    auc_val: float
    auc_val_repr: float
    eligible: bool
    val_eligible: bool
    max_p: float
    seconds: float = 0.0
    selected: bool = False
    model: DiceModel | None = field(default=None, repr=False)


@dataclass
class SearchResult:
    candidates: list
    selected: Candidate | None
    ablated: bool = False

    @property
    def model(self) -> DiceModel | None:
        return None if self.selected is None else self.selected.model


def candidate_seed(base_seed: int, K: int, d: int) -> int:
    return derive_seed(base_seed, K, d)


def _safe_auc(scores, y) -> float:
    try:
        return roc_auc(scores, y)
    except ValueError:
        return float("nan")


def evaluate_candidate(model: DiceModel, split: SplitCohort) -> dict:
    """Validation AUC with membership and with representation as the predictor."""
    val = split.validation
    pv = predict(model, val)
    y_val = val.outcomes
    auc = _safe_auc(pv.prob, y_val)

    z_train = encode_cohort(model, split.train)
    design = np.column_stack([z_train, split.train.confounders, np.ones(len(split.train))])
    head = fit_logistic(design, split.train.outcomes)
    val_design = np.column_stack([pv.z, val.confounders, np.ones(len(val))])
    auc_repr = _safe_auc(head.predict_proba(val_design), y_val)

    try:
        val_sig = significance_matrix(one_hot(pv.hard, model.K), val.confounders, y_val, model.hyper.significance)
        val_eligible = val_sig.eligible
    except ValueError:
        val_eligible = False
    return {"auc_val": auc, "auc_val_repr": auc_repr, "val_eligible": val_eligible}


def _run_candidate(args) -> Candidate:
    split, K, d, hyper, ablate = args
    start = time.perf_counter()
    model = train_dice(split, K, d, hyper, ablate=ablate)
    scores = evaluate_candidate(model, split)
    seconds = time.perf_counter() - start
    log.info("K=%d d=%d auc_val=%.4f eligible=%s (%.1fs)", K, d, scores["auc_val"], model.eligible, seconds)
    return Candidate(
        K=K,
        d=d,
        seed=hyper.seed,
        eligible=model.eligible,
        max_p=model.significance.max_p,
        seconds=seconds,
        model=model,
        **scores,
    )


def select_candidate(candidates, gate: bool = True) -> Candidate | None:
    """Highest validation AUC among eligible candidates; ties go to smaller K, then smaller d."""
    pool = [c for c in candidates if (c.eligible or not gate) and np.isfinite(c.auc_val)]
    if not pool:
        return None
    return min(pool, key=lambda c: (-c.auc_val, c.K, c.d))


def grid_search(
    split: SplitCohort,
    space: SearchSpace,
    hyper: DiceHyper,
    ablate: bool = False,
    workers: int = 1,
) -> SearchResult:
    """Train every (K, d) in ``space`` and pick the best eligible architecture.

    Each candidate's seed is derived from (hyper.seed, K, d) so results do
    not depend on execution order or worker placement. With ``ablate`` the
    significance penalty is dropped and the eligibility gate bypassed.
    """
    jobs = [(split, K, d, hyper.replace(seed=candidate_seed(hyper.seed, K, d)), ablate) for K, d in space.grid()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            candidates = list(pool.map(_run_candidate, jobs))
    else:
        candidates = [_run_candidate(job) for job in jobs]
    candidates.sort(key=lambda c: (c.K, c.d))
    chosen = select_candidate(candidates, gate=not ablate)
    if chosen is None:
        raise NoEligibleCandidateError(candidates)
    chosen.selected = True
    return SearchResult(candidates=candidates, selected=chosen, ablated=ablate)


def candidate_report(result_or_candidates, timing: bool = True) -> list[dict]:
    """One row per candidate sorted by (K, d)."""
    cands = getattr(result_or_candidates, "candidates", result_or_candidates)
    ablated = getattr(result_or_candidates, "ablated", False)
    rows = []
    for c in sorted(cands, key=lambda c: (c.K, c.d)):
        row = {
            "K": c.K,
            "d": c.d,
            "auc_val": c.auc_val,
            "eligible": "yes" if c.eligible else "no",
            "selected": "yes" if c.selected else "no",
            "seconds": round(c.seconds, 3) if timing else "",
        }
        if ablated:
            row["would_be_eligible"] = row["eligible"]
        rows.append(row)
    return rows


def write_candidates_csv(result, path, timing: bool = False) -> None:
    rows = candidate_report(result, timing=timing)
    columns = list(CANDIDATE_COLUMNS) + (["would_be_eligible"] if getattr(result, "ablated", False) else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            row = dict(row)
            row["auc_val"] = "" if not np.isfinite(row["auc_val"]) else f"{row['auc_val']:.6f}"
            w.writerow(row)
