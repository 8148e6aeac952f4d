"""Cohorts of subjects: CSV loading, seeded 4:1:1 splitting, normalization and
synthetic risk-stratified generators."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from functools import cached_property
from pathlib import Path

import numpy as np

from .numeric import make_rng


class DataError(ValueError):
    """Malformed or inconsistent cohort data."""


@dataclass(frozen=True, eq=False)
class Subject:
    id: str
    days: np.ndarray
    features: np.ndarray  # raw, (n_p, n_raw_features)
    outcome: int | None
    confounders: np.ndarray
    subgroup: str | None = None
    planted_cluster: int | None = None

    @property
    def n_events(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Normalization:
    """Per-feature scaling fitted on a training split.

    ``day_scale`` is the largest day span among training subjects (at least 1);
    the appended day feature is ``(day - first_day) / day_scale``.
    """

    mean: np.ndarray
    std: np.ndarray
    day_scale: float
    sequential: bool

    def transform(self, subject: Subject) -> np.ndarray:
        x = (subject.features - self.mean) / self.std
        if not self.sequential:
            return x
        rel = (subject.days - subject.days[0]) / self.day_scale
        return np.column_stack([x, rel])

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "day_scale": self.day_scale,
            "sequential": self.sequential,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            day_scale=float(d["day_scale"]),
            sequential=bool(d["sequential"]),
        )


def fit_normalization(subjects, sequential: bool) -> Normalization:
    rows = np.vstack([s.features for s in subjects])
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    span = max(float(s.days[-1] - s.days[0]) for s in subjects)
    return Normalization(mean=mean, std=std, day_scale=max(span, 1.0), sequential=sequential)


class Cohort:
    """An immutable collection of subjects sharing one feature layout."""

    def __init__(
        self,
        subjects,
        feature_names,
        confounder_names,
        normalization: Normalization | None = None,
        sequential: bool | None = None,
    ):
        self.subjects = tuple(subjects)
        if not self.subjects:
            raise DataError("no subjects")
        self.feature_names = tuple(feature_names)
        self.confounder_names = tuple(confounder_names)
        if sequential is None:
            sequential = any(s.n_events > 1 for s in self.subjects)
        self.sequential = bool(sequential)
        width = len(self.feature_names)
        for s in self.subjects:
            if s.features.ndim != 2 or s.features.shape[1] != width:
                raise DataError(f"subject {s.id}: expected {width} features per event")
            if s.n_events < 1:
                raise DataError(f"subject {s.id}: no events")
            if s.confounders.shape != (len(self.confounder_names),):
                raise DataError(f"subject {s.id}: expected {len(self.confounder_names)} confounders")
        if normalization is None:
            normalization = fit_normalization(self.subjects, self.sequential)
        self.normalization = normalization

    def __len__(self) -> int:
        return len(self.subjects)

    def __repr__(self) -> str:
        return f"Cohort(P={len(self)}, F={self.n_features}, sequential={self.sequential})"

    @property
    def n_features(self) -> int:
        return len(self.feature_names) + (1 if self.sequential else 0)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    @cached_property
    def outcomes(self) -> np.ndarray:
        if any(s.outcome is None for s in self.subjects):
            raise DataError("cohort has subjects without outcomes")
        return np.array([s.outcome for s in self.subjects], dtype=np.float64)

    @cached_property
    def confounders(self) -> np.ndarray:
        return np.vstack([s.confounders for s in self.subjects]).reshape(len(self), -1)

    @property
    def planted(self) -> np.ndarray | None:
        if any(s.planted_cluster is None for s in self.subjects):
            return None
        return np.array([s.planted_cluster for s in self.subjects], dtype=int)

    @property
    def subgroups(self) -> list[str | None]:
        return [s.subgroup for s in self.subjects]

    def events(self, i: int) -> np.ndarray:
        return self.normalization.transform(self.subjects[i])

    @cached_property
    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """Normalized events right-padded with zeros: (P, max_len, F) and lengths."""
        lengths = np.array([s.n_events for s in self.subjects], dtype=int)
        X = np.zeros((len(self), int(lengths.max()), self.n_features))
        for i in range(len(self)):
            X[i, : lengths[i]] = self.events(i)
        return X, lengths

    def subset(self, indices) -> "Cohort":
        return Cohort(
            [self.subjects[i] for i in indices],
            self.feature_names,
            self.confounder_names,
            normalization=self.normalization,
            sequential=self.sequential,
        )

    def with_normalization(self, norm: Normalization) -> "Cohort":
        return Cohort(self.subjects, self.feature_names, self.confounder_names, norm, self.sequential)

    def check_outcomes(self) -> None:
        y = self.outcomes
        if not (np.any(y == 1) and np.any(y == 0)):
            raise DataError("cohort needs at least one subject of each outcome class")


@dataclass
class SplitCohort:
    train: Cohort
    validation: Cohort
    test: Cohort
    seed: int


def _largest_remainder(n: int, ratios) -> list[int]:
    total = float(sum(ratios))
    exact = [n * r / total for r in ratios]
    sizes = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_cohort(cohort: Cohort, ratios=(4, 1, 1), seed: int = 0) -> SplitCohort:
    """Seeded subject-level shuffle and partition; normalization is fitted on train only."""
    n = len(cohort)
    if n < 6:
        raise DataError(f"need at least 6 subjects to split, got {n}")
    sizes = _largest_remainder(n, ratios)
    perm = make_rng(seed).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    parts = [np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:])]
    train_subjects = [cohort.subjects[i] for i in parts[0]]
    norm = fit_normalization(train_subjects, cohort.sequential)
    views = [cohort.subset(idx).with_normalization(norm) for idx in parts]
    return SplitCohort(train=views[0], validation=views[1], test=views[2], seed=seed)


# --- CSV loading ---------------------------------------------------------

def _parse_float(text: str, path, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: column {column!r}: not a number: {text!r}") from None
    if not np.isfinite(value):
        raise DataError(f"{path}:{line}: column {column!r}: non-finite value")
    return value


def _read_rows(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from None
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: no subjects")
    return path, rows


def load_cohort(features_path, outcomes_path, require_outcome: bool = True) -> Cohort:
    """Read the features/outcomes CSV pair into a Cohort.

    Features: ``subject_id,day,<f1>,...``, one row per subject-day.
    Outcomes: ``subject_id,outcome,<confounders...>[,subgroup]``.
    """
    fpath, frows = _read_rows(features_path)
    _, header = frows[0]
    header = [h.strip() for h in header]
    if header[:2] != ["subject_id", "day"] or len(header) < 3:
        raise DataError(f"{fpath}:{frows[0][0]}: header must start with subject_id,day and name features")
    feature_names = header[2:]
    if len(set(feature_names)) != len(feature_names):
        raise DataError(f"{fpath}: duplicate feature columns")
    events: dict[str, list] = {}
    for line, row in frows[1:]:
        if len(row) != len(header):
            raise DataError(f"{fpath}:{line}: expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        if not sid:
            raise DataError(f"{fpath}:{line}: missing subject_id")
        try:
            day = int(row[1])
        except ValueError:
            raise DataError(f"{fpath}:{line}: day must be an integer, got {row[1]!r}") from None
        values = [_parse_float(c, fpath, line, feature_names[j]) for j, c in enumerate(row[2:])]
        events.setdefault(sid, []).append((day, line, values))
    if not events:
        raise DataError(f"{fpath}: no subjects")

    opath, orows = _read_rows(outcomes_path)
    _, oheader = orows[0]
    oheader = [h.strip() for h in oheader]
    if oheader[:2] != ["subject_id", "outcome"]:
        raise DataError(f"{opath}:{orows[0][0]}: header must start with subject_id,outcome")
    has_subgroup = oheader[-1] == "subgroup"
    confounder_names = oheader[2 : len(oheader) - (1 if has_subgroup else 0)]
    if "subgroup" in confounder_names:
        raise DataError(f"{opath}: 'subgroup' must be the last column")
    outcomes: dict[str, tuple] = {}
    for line, row in orows[1:]:
        if len(row) != len(oheader):
            raise DataError(f"{opath}:{line}: expected {len(oheader)} fields, got {len(row)}")
        sid = row[0].strip()
        if not sid:
            raise DataError(f"{opath}:{line}: missing subject_id")
        if sid in outcomes:
            raise DataError(f"{opath}:{line}: duplicate subject_id {sid!r}")
        raw = row[1].strip()
        if raw in ("0", "1"):
            y = int(raw)
        elif raw == "" and not require_outcome:
            y = None
        else:
            raise DataError(f"{opath}:{line}: outcome must be 0 or 1, got {raw!r}")
        conf = [_parse_float(c, opath, line, confounder_names[j]) for j, c in enumerate(row[2 : 2 + len(confounder_names)])]
        group = row[-1].strip() if has_subgroup else None
        outcomes[sid] = (y, np.array(conf, dtype=np.float64), group or None)

    subjects = []
    for sid, rows in events.items():
        if sid not in outcomes:
            raise DataError(f"{fpath}:{rows[0][1]}: subject {sid!r} missing from {opath}")
        rows.sort(key=lambda r: r[0])
        days = [r[0] for r in rows]
        if len(set(days)) != len(days):
            raise DataError(f"{fpath}: subject {sid!r} has duplicate days")
        y, conf, group = outcomes[sid]
        subjects.append(
            Subject(
                id=sid,
                days=np.array(days, dtype=np.float64),
                features=np.array([r[2] for r in rows], dtype=np.float64),
                outcome=y,
                confounders=conf,
                subgroup=group,
            )
        )
    extra = sorted(set(outcomes) - set(events))
    if extra:
        raise DataError(f"{opath}: subject {extra[0]!r} has no feature rows in {fpath}")
    cohort = Cohort(subjects, feature_names, confounder_names)
    if require_outcome:
        cohort.check_outcomes()
    return cohort


def write_cohort(cohort: Cohort, features_path, outcomes_path, planted_path=None) -> None:
    """Write a cohort back out in the CSV pair format (raw, un-normalized values)."""
    with open(features_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "day", *cohort.feature_names])
        for s in cohort.subjects:
            for day, row in zip(s.days, s.features):
                w.writerow([s.id, int(day), *[repr(float(v)) for v in row]])
    has_group = any(s.subgroup is not None for s in cohort.subjects)
    with open(outcomes_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "outcome", *cohort.confounder_names, *(["subgroup"] if has_group else [])])
        for s in cohort.subjects:
            extra = [s.subgroup or ""] if has_group else []
            w.writerow([s.id, "" if s.outcome is None else s.outcome, *[repr(float(v)) for v in s.confounders], *extra])
    if planted_path is not None and cohort.planted is not None:
        with open(planted_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_id", "planted_cluster"])
            for s in cohort.subjects:
                w.writerow([s.id, s.planted_cluster])


# --- synthetic cohorts ---------------------------------------------------

@dataclass
class GeneratorSpec:
    k_true: int = 3
    per_cluster: int = 200
    feature_dim: int = 8
    seq_len_min: int = 2
    seq_len_max: int = 4
    separation: float = 4.0
    outcome_probs: list = field(default_factory=lambda: [0.8, 0.4, 0.1])
    confounder_dim: int = 2
    n_subgroups: int = 2

    def validate(self) -> None:
        if self.k_true < 1:
            raise DataError("k_true must be >= 1")
        if self.per_cluster < 1 or self.feature_dim < 1 or self.confounder_dim < 0:
            raise DataError("per_cluster and feature_dim must be >= 1, confounder_dim >= 0")
        if not 1 <= self.seq_len_min <= self.seq_len_max:
            raise DataError("need 1 <= seq_len_min <= seq_len_max")
        if self.separation < 0:
            raise DataError("separation must be >= 0")
        if len(self.outcome_probs) != self.k_true:
            raise DataError(f"outcome_probs needs {self.k_true} entries")
        for p in self.outcome_probs:
            if not 0.0 < p < 1.0:
                raise DataError(f"outcome probabilities must lie in (0, 1), got {p}")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown generator keys: {sorted(unknown)}")
        spec = cls(**d)
        spec.outcome_probs = [float(p) for p in spec.outcome_probs]
        return spec

    @classmethod
    def from_json(cls, path) -> "GeneratorSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def synth_cohort(spec: GeneratorSpec | dict, seed: int = 0) -> Cohort:
    """Planted-cluster cohort.

    Each cluster has a latent center; centers are orthogonal directions scaled
    by ``separation``. A subject draws a latent point around its center, and
    every event is that point (plus small per-event jitter) pushed through a
    fixed random linear map to ``feature_dim`` observed features. Outcomes are
    Bernoulli with the cluster's probability; confounders are independent of
    the cluster.
    """
    if isinstance(spec, dict):
        spec = GeneratorSpec.from_dict(spec)
    spec.validate()
    rng = make_rng(seed)
    latent = max(2, spec.k_true)
    q, _ = np.linalg.qr(rng.standard_normal((latent, latent)))
    centers = spec.separation * q[: spec.k_true]
    mixing = rng.standard_normal((latent, spec.feature_dim)) / np.sqrt(latent)
    groups = [chr(ord("A") + g) for g in range(spec.n_subgroups)]

    subjects = []
    for k in range(spec.k_true):
        for _ in range(spec.per_cluster):
            u = centers[k] + rng.standard_normal(latent)
            n = int(rng.integers(spec.seq_len_min, spec.seq_len_max + 1))
            jitter = 0.3 * rng.standard_normal((n, latent))
            x = (u + jitter) @ mixing + 0.1 * rng.standard_normal((n, spec.feature_dim))
            start = int(rng.integers(0, 30))
            gaps = rng.integers(1, 4, size=n - 1)
            days = np.concatenate([[start], start + np.cumsum(gaps)]).astype(np.float64)
            y = int(rng.random() < spec.outcome_probs[k])
            conf = rng.standard_normal(spec.confounder_dim)
            if spec.confounder_dim >= 2:
                conf[1] = float(rng.random() < 0.5)
            group = groups[int(rng.integers(len(groups)))] if groups else None
            subjects.append(
                Subject(
                    id=f"s{len(subjects):05d}",
                    days=days,
                    features=x,
                    outcome=y,
                    confounders=conf,
                    subgroup=group,
                    planted_cluster=k,
                )
            )
    names = [f"f{j + 1}" for j in range(spec.feature_dim)]
    conf_names = (["age", "sex"] + [f"c{j + 1}" for j in range(2, spec.confounder_dim)])[: spec.confounder_dim]
    sequential = spec.seq_len_max > 1
    return Cohort(subjects, names, conf_names, sequential=sequential)
