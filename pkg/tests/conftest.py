import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dice.cohort import Cohort, GeneratorSpec, Subject, split_cohort, synth_cohort  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(number, name, passed, detail=""):
        ACCEPTANCE_LINES.append(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        return passed

    return record


def make_subject(sid, features, outcome=0, confounders=(0.0,), days=None, subgroup=None, planted=None):
    features = np.atleast_2d(np.asarray(features, dtype=float))
    days = np.arange(len(features), dtype=float) if days is None else np.asarray(days, dtype=float)
    return Subject(id=sid, days=days, features=features, outcome=outcome,
                   confounders=np.asarray(confounders, dtype=float), subgroup=subgroup, planted_cluster=planted)


@pytest.fixture(scope="session")
def small_split():
    cohort = synth_cohort(GeneratorSpec(per_cluster=50), seed=3)
    return split_cohort(cohort, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["Cohort", "make_subject"]
