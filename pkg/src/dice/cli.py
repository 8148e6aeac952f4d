"""``dice`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 no eligible
candidate, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import ArtifactError, load_model, save_model
from .cohort import Cohort, DataError, GeneratorSpec, load_cohort, split_cohort, synth_cohort, write_cohort
from .evaluation import BASELINES, BaselineSpec, evaluate_dice, pca_project, run_baseline
from .search import NoEligibleCandidateError, SearchSpace, candidate_report, grid_search, write_candidates_csv
from .significance import SingularHessianError
from .trainer import TRACE_COLUMNS, DiceHyper, DimensionMismatchError, predict, train_dice

log = logging.getLogger("dice")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NO_ELIGIBLE, EXIT_NUMERIC = 0, 2, 3, 4, 5
CONFIG_SECTIONS = {"data", "generator", "search", "hyper", "baselines", "output", "seed", "split", "ablate_significance"}


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    data: dict | None = None
    generator: GeneratorSpec | None = None
    ks: tuple = (2, 3, 4)
    ds: tuple = (8, 16)
    workers: int = 1
    hyper: DiceHyper = dataclasses.field(default_factory=DiceHyper)
    baselines: tuple = BASELINES
    out: Path = Path("dice_out")
    timing: bool = False
    split: tuple = (4, 1, 1)
    ablate: bool = False

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "data": self.data,
            "generator": None if self.generator is None else self.generator.to_dict(),
            "search": {"K": list(self.ks), "d": list(self.ds), "workers": self.workers},
            "hyper": self.hyper.to_dict(),
            "baselines": list(self.baselines),
            "output": {"timing": self.timing},
            "split": list(self.split),
            "ablate_significance": self.ablate,
        }


def _int_list(text: str, flag: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got {text!r}") from None


def build_config(args) -> RunConfig:
    raw: dict = {}
    base = Path.cwd()
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        base = path.resolve().parent
    unknown = set(raw) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    if "data" in raw and "generator" in raw:
        raise ConfigError("config must give either 'data' or 'generator', not both")

    cfg = RunConfig()
    try:
        cfg.seed = int(raw.get("seed", 0))
        if "data" in raw:
            data = dict(raw["data"])
            for key in ("features", "outcomes"):
                if key not in data:
                    raise ConfigError(f"data section needs '{key}'")
            for key in ("features", "outcomes", "planted"):
                if key in data:
                    data[key] = str((base / data[key]).resolve()) if not Path(data[key]).is_absolute() else data[key]
            cfg.data = data
        else:
            cfg.generator = GeneratorSpec.from_dict(raw.get("generator", {}))
            cfg.generator.validate()
        search = raw.get("search", {})
        cfg.ks = tuple(search.get("K", cfg.ks))
        cfg.ds = tuple(search.get("d", cfg.ds))
        cfg.workers = int(search.get("workers", 1))
        cfg.hyper = DiceHyper.from_dict(raw.get("hyper", {}))
        cfg.baselines = tuple(raw.get("baselines", BASELINES))
        output = raw.get("output", {})
        if "dir" in output:
            cfg.out = base / output["dir"]
        cfg.timing = bool(output.get("timing", False))
        cfg.split = tuple(raw.get("split", (4, 1, 1)))
        cfg.ablate = bool(raw.get("ablate_significance", False))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None

    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = Path(args.out)
    if getattr(args, "k_grid", None):
        cfg.ks = _int_list(args.k_grid, "--k-grid")
    if getattr(args, "d_grid", None):
        cfg.ds = _int_list(args.d_grid, "--d-grid")
    if getattr(args, "baselines", None) is not None:
        cfg.baselines = tuple(b.strip() for b in args.baselines.split(",") if b.strip())
    if getattr(args, "ablate_significance", False):
        cfg.ablate = True

    for b in cfg.baselines:
        if b not in BASELINES:
            raise ConfigError(f"unknown baseline {b!r}; choose from {', '.join(BASELINES)}")
    try:
        SearchSpace(cfg.ks, cfg.ds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if len(cfg.split) != 3 or any(r <= 0 for r in cfg.split):
        raise ConfigError("split needs three positive ratios")
    cfg.hyper = cfg.hyper.replace(seed=cfg.seed)
    if cfg.workers < 1:
        raise ConfigError("search.workers must be >= 1")
    return cfg


def _attach_planted(cohort: Cohort, path) -> Cohort:
    labels = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels[row["subject_id"]] = int(row["planted_cluster"])
    subjects = [dataclasses.replace(s, planted_cluster=labels.get(s.id)) for s in cohort.subjects]
    return Cohort(subjects, cohort.feature_names, cohort.confounder_names)


def load_data(cfg: RunConfig) -> Cohort:
    if cfg.data is not None:
        cohort = load_cohort(cfg.data["features"], cfg.data["outcomes"])
        if "planted" in cfg.data:
            cohort = _attach_planted(cohort, cfg.data["planted"])
        return cohort
    return synth_cohort(cfg.generator, cfg.seed)


# --- output helpers ------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "yes" if x else "no"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if not np.isfinite(x) else f"{x:.6f}"


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_trace(path, trace) -> None:
    _write_csv(path, TRACE_COLUMNS, [[row.get(c) for c in TRACE_COLUMNS] for row in trace])


def write_tables(out: Path, reports) -> None:
    """Side-by-side method tables: clustering quality and outcome prediction."""
    rows = []
    for r in reports:
        c = r.clustering or {}
        ratios = ";".join("" if v is None else f"{v:.4f}" for v in r.outcome_ratios["ratios"])
        rows.append([r.method, r.K, r.d, c.get("silhouette"), c.get("calinski_harabasz"), c.get("davies_bouldin"),
                     ratios, r.outcome_ratios["spread"], r.eligible, r.ari_test])
    _write_csv(out / "table_clustering.csv",
               ["method", "K", "d", "silhouette", "calinski_harabasz", "davies_bouldin", "outcome_ratios",
                "ratio_spread", "eligible", "ari"], rows)
    metrics = ["auc", "acc", "fpr", "tpr", "fnr", "tnr", "ppv", "npv"]
    rows = []
    for r in reports:
        for predictor, block in (("membership", r.classification_membership),
                                 ("representation", r.classification_representation)):
            rows.append([r.method, predictor, *[block[m] for m in metrics]])
    _write_csv(out / "table_classification.csv", ["method", "predictor", *metrics], rows)


def write_projection(out: Path, ids, Z, labels, outcomes, ratios, title) -> None:
    from .plotting import projection_figure

    proj = pca_project(Z, 2)
    rows = [[sid, proj.coords[i, 0], proj.coords[i, 1], int(labels[i]), "" if outcomes is None else int(outcomes[i])]
            for i, sid in enumerate(ids)]
    _write_csv(out / "projection.csv", ["subject_id", "pc1", "pc2", "cluster", "outcome"], rows)
    projection_figure(proj.coords, labels, ratios, out / "projection.svg", proj.explained_variance_ratio, title)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, command: str) -> None:
    import matplotlib
    import scipy

    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": {
            "dice": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    _write_json(out / "manifest.json", manifest)


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


# --- commands ------------------------------------------------------------

def _search(cfg: RunConfig, split, out: Path):
    from .plotting import candidates_figure

    space = SearchSpace(cfg.ks, cfg.ds)
    try:
        result = grid_search(split, space, cfg.hyper, ablate=cfg.ablate, workers=cfg.workers)
    except NoEligibleCandidateError as exc:
        from .search import SearchResult

        result = SearchResult(candidates=exc.candidates, selected=None, ablated=cfg.ablate)
        _emit_search(cfg, result, out, candidates_figure)
        raise
    _emit_search(cfg, result, out, candidates_figure)
    return result


def _emit_search(cfg, result, out, candidates_figure) -> None:
    write_candidates_csv(result, out / "candidates.csv", timing=cfg.timing)
    candidates_figure(candidate_report(result, timing=False), out / "candidates.svg")
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for c in result.candidates:
        write_trace(traces / f"trace_K{c.K}_d{c.d}.csv", c.model.trace)
    for c in result.candidates:
        log.info("K=%d d=%d auc_val=%s eligible=%s", c.K, c.d, _fmt(c.auc_val), "yes" if c.eligible else "no")


def cmd_synth(args) -> int:
    cfg = build_config(args)
    if cfg.generator is None:
        raise ConfigError("synth needs a generator section, not data paths")
    out = _prepare_out(cfg)
    cohort = synth_cohort(cfg.generator, cfg.seed)
    write_cohort(cohort, out / "features.csv", out / "outcomes.csv", out / "planted.csv")
    write_manifest(out, cfg, "synth")
    print(f"wrote {len(cohort)} subjects to {out}")
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = build_config(args)
    out = _prepare_out(cfg)
    split = split_cohort(load_data(cfg), cfg.split, cfg.seed)
    try:
        result = _search(cfg, split, out)
    finally:
        write_manifest(out, cfg, "search")
    save_model(result.model, out / "model.bin")
    write_manifest(out, cfg, "search")
    print(f"selected K={result.selected.K} d={result.selected.d} auc_val={result.selected.auc_val:.4f}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = build_config(args)
    out = _prepare_out(cfg)
    split = split_cohort(load_data(cfg), cfg.split, cfg.seed)
    try:
        result = _search(cfg, split, out)
    except NoEligibleCandidateError:
        write_manifest(out, cfg, "run")
        raise
    model = result.model
    save_model(model, out / "model.bin")

    reports = [evaluate_dice(model, split)]
    for name in cfg.baselines:
        reports.append(run_baseline(split, BaselineSpec(name, model.K, model.d), cfg.hyper))
    for r in reports:
        _write_json(out / f"eval_{r.method}.json", r.to_dict())
    write_tables(out, reports)
    dice_report = reports[0]
    write_projection(out, split.test.ids, dice_report.test_z, dice_report.test_labels, split.test.outcomes,
                     dice_report.outcome_ratios["ratios"], f"DICE test subjects (K={model.K}, d={model.d})")
    write_manifest(out, cfg, "run")
    print(f"selected K={model.K} d={model.d}; test AUC {_fmt(dice_report.classification_membership['auc'])}; "
          f"outputs in {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    if len(cfg.ks) != 1 or len(cfg.ds) != 1:
        raise ConfigError("train needs a single K and d (use --k-grid K --d-grid d)")
    out = _prepare_out(cfg)
    split = split_cohort(load_data(cfg), cfg.split, cfg.seed)
    model = train_dice(split, cfg.ks[0], cfg.ds[0], cfg.hyper, ablate=cfg.ablate)
    save_model(model, out / "model.bin")
    write_trace(out / "trace.csv", model.trace)
    _write_json(out / "significance.json", model.significance.to_dict())
    write_manifest(out, cfg, "train")
    status = "eligible" if model.eligible else "not eligible (some cluster pair is not significant)"
    print(f"trained K={model.K} d={model.d}: {status}")
    return EXIT_OK


def _subjects_from_args(args, model) -> Cohort:
    if not args.features or not args.covariates:
        raise ConfigError("need --features and --covariates")
    return load_cohort(args.features, args.covariates, require_outcome=False)


def cmd_eval(args) -> int:
    cfg = build_config(args)
    if not args.model:
        raise ConfigError("eval needs --model")
    out = _prepare_out(cfg)
    model = load_model(args.model)
    split = split_cohort(load_data(cfg), cfg.split, cfg.seed)
    reports = [evaluate_dice(model, split)]
    for name in cfg.baselines:
        reports.append(run_baseline(split, BaselineSpec(name, model.K, model.d), cfg.hyper))
    for r in reports:
        _write_json(out / f"eval_{r.method}.json", r.to_dict())
    write_tables(out, reports)
    write_manifest(out, cfg, "eval")
    print(f"wrote {len(reports)} evaluation reports to {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    cohort = _subjects_from_args(args, model)
    pred = predict(model, cohort)
    ranks = model.risk_ranks()
    rows = [[sid, int(pred.hard[i]), int(ranks[pred.hard[i]]), float(pred.prob[i])] for i, sid in enumerate(cohort.ids)]
    header = ["subject_id", "cluster", "risk_rank", "outcome_prob"]
    if args.out:
        _write_csv(args.out, header, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return EXIT_OK


def cmd_project(args) -> int:
    model = load_model(args.model)
    cohort = _subjects_from_args(args, model)
    out = Path(args.out or "dice_projection")
    out.mkdir(parents=True, exist_ok=True)
    pred = predict(model, cohort)
    outcomes = None if any(s.outcome is None for s in cohort.subjects) else cohort.outcomes
    if outcomes is not None:
        from .evaluation import outcome_ratio_by_cluster

        ratios = outcome_ratio_by_cluster(pred.hard, outcomes, model.K).ratios
    else:
        ratios = [None if not np.isfinite(r) else float(r) for r in model.train_outcome_ratio]
    write_projection(out, cohort.ids, pred.z, pred.hard, outcomes, ratios, f"K={model.K}, d={model.d}")
    print(f"wrote projection of {len(cohort)} subjects to {out}")
    return EXIT_OK


# --- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dice", description="Outcome-aware clustering with significance-constrained architecture search.")
    parser.add_argument("--version", action="version", version=f"dice {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False, grid=True):
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")
        p.add_argument("--out", help="output directory")
        if grid:
            p.add_argument("--k-grid", help="comma-separated cluster counts, e.g. 2,3,4")
            p.add_argument("--d-grid", help="comma-separated latent sizes, e.g. 8,16")
            p.add_argument("--ablate-significance", action="store_true",
                           help="drop the significance penalty and bypass the eligibility gate")
            p.add_argument("--baselines", help="comma-separated subset of " + ",".join(BASELINES) + " (empty for none)")
        if model:
            p.add_argument("--model", help="model.bin produced by train/search/run")

    common(sub.add_parser("synth", help="write a planted-cluster cohort as CSV"), grid=False)
    common(sub.add_parser("run", help="search, evaluate against baselines and write the report"))
    common(sub.add_parser("search", help="grid search only"))
    common(sub.add_parser("train", help="train a single (K, d) architecture"))
    common(sub.add_parser("eval", help="evaluate a saved model on the test split"), model=True)
    for name, text in (("predict", "assign new subjects to learned clusters"), ("project", "2-D projection of subjects")):
        p = sub.add_parser(name, help=text)
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.add_argument("--model", required=True)
        p.add_argument("--features", required=True, help="subject_id,day,<features> CSV")
        p.add_argument("--covariates", required=True, help="subject_id,outcome,<confounders> CSV (outcome may be blank)")
        p.add_argument("--out", help="output file (predict) or directory (project)")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "run": cmd_run,
    "search": cmd_search,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "project": cmd_project,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"dice: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ArtifactError, DimensionMismatchError, FileNotFoundError) as exc:
        print(f"dice: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NoEligibleCandidateError as exc:
        print(f"dice: {exc}; candidate table written", file=sys.stderr)
        return EXIT_NO_ELIGIBLE
    except (FloatingPointError, SingularHessianError, np.linalg.LinAlgError) as exc:
        print(f"dice: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
