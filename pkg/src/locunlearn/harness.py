"""Run orchestration: train, unlearn, evaluate, sweep, compare.

Outputs live under ``<root>/<config-hash>/``::

    original/<seed>/model.ckpt, manifest.json
    oracle/<seed>/model.ckpt, manifest.json, report.json
    <strategy>/<algorithm>/<alpha>/<seed>/model.ckpt, mask.bin, manifest.json, report.json
    summary.csv, summary.json, deltas.json
    sweep/...   (same cell layout plus sweep.csv, summary.csv, sweep_manifest.json)

Metric files (report.json, summary.*, deltas.json, sweep.csv) contain no
timings, so identical config and seeds give identical bytes. Timings go to
the manifests.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import localization as loc
from .config import ExperimentConfig
from .data import DataView, load_dataset, make_split, mia_calibration_subset, train_test_split
from .errors import ConfigError, MissingArtifactError
from .evaluation import (
    DELTA_METRICS,
    MetricsReport,
    accuracy,
    aggregate_runs,
    delta_report,
    evaluate_model,
    read_summary_csv,
    summary_csv,
)
from .nn import build_model, fit, load_checkpoint, model_digest, save_checkpoint
from .unlearning import retrain_oracle, run_algorithm

log = logging.getLogger(__name__)

ENV_OUT = "LOCUNLEARN_OUT"
RESERVED_NAMES = ("original", "oracle", "sweep")


@dataclass(frozen=True)
class Cell:
    strategy: str
    algorithm: str
    alpha: float
    seed: int

    def relpath(self) -> Path:
        return Path(self.strategy) / self.algorithm / f"{self.alpha:g}" / str(self.seed)

    def label(self) -> str:
        return f"{self.strategy:>12s} {self.algorithm:>13s} alpha={self.alpha:<6g} seed={self.seed}"


def output_root(config: ExperimentConfig, out=None) -> Path:
    base = out or os.environ.get(ENV_OUT) or config.output_dir
    return Path(base) / config.config_hash()


def run_matrix(config: ExperimentConfig, seeds=None) -> list:
    seeds = config.seeds if seeds is None else seeds
    for s in config.strategies:
        if s.name in RESERVED_NAMES:
            raise ConfigError(f"strategy name {s.name!r} is reserved")
    return [Cell(s.name, a.name, alpha, seed)
            for s in config.strategies for alpha in s.alphas
            for a in config.algorithms for seed in seeds]


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _read_manifest(path: Path):
    try:
        m = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    return m if m.get("status") == "complete" else None


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*items)))


# ------------------------------------------------------------------- data context

_DATA_CACHE: dict = {}


@dataclass
class DataContext:
    train: object
    test: object
    split: object

    def retain(self):
        return self.split.retain()

    def forget(self):
        return self.split.forget()

    def calib(self, seed: int) -> DataView:
        idx = mia_calibration_subset(self.split.retain(), self.test, seed)
        return DataView(self.train, idx)


def data_context(config: ExperimentConfig) -> DataContext:
    key = json.dumps([config.to_dict()["dataset"], config.forget], sort_keys=True)
    if key not in _DATA_CACHE:
        d = config.dataset
        if d.source is not None:
            train, test = train_test_split(load_dataset(d.source), d.test_fraction, d.split_seed)
        else:
            train, test = load_dataset(d.train), load_dataset(d.test)
        split = make_split(train, config.forget_spec())
        _DATA_CACHE[key] = DataContext(train, test, split)
    return _DATA_CACHE[key]


# ------------------------------------------------------------------------ train


def _train_one(config: ExperimentConfig, root: Path, seed: int) -> dict:
    ctx = data_context(config)
    out = {}
    started = time.perf_counter()
    model = build_model(config.architecture, seed=seed)
    fit(model, DataView(ctx.train), config.train_recipe(), seed)
    t_orig = time.perf_counter() - started
    path = save_checkpoint(root / "original" / str(seed) / "model.ckpt", model, seed)
    _write_json(path.with_name("manifest.json"), {
        "status": "complete", "kind": "original", "seed": seed,
        "config_hash": config.config_hash(), "checkpoint_sha256": model_digest(model),
        "train_accuracy": accuracy(model, DataView(ctx.train)),
        "wall_time_s": t_orig, "artifacts": {"checkpoint": "model.ckpt"},
    })
    out["original"] = str(path)

    started = time.perf_counter()
    oracle_seed = seed + config.oracle.seed_offset
    oracle = retrain_oracle(ctx.retain(), config.architecture, config.oracle_recipe(), oracle_seed)
    t_oracle = time.perf_counter() - started
    path = save_checkpoint(root / "oracle" / str(seed) / "model.ckpt", oracle, oracle_seed)
    _write_json(path.with_name("manifest.json"), {
        "status": "complete", "kind": "oracle", "seed": seed, "init_seed": oracle_seed,
        "config_hash": config.config_hash(), "checkpoint_sha256": model_digest(oracle),
        "retain_accuracy": accuracy(oracle, ctx.retain()),
        "wall_time_s": t_oracle, "artifacts": {"checkpoint": "model.ckpt"},
    })
    out["oracle"] = str(path)
    return out


def cmd_train(config: ExperimentConfig, out=None, workers: int = 1, seeds=None) -> dict:
    """Train the original model and the retrain oracle for every seed."""
    root = output_root(config, out)
    seeds = config.seeds if seeds is None else seeds
    results = _map(_train_one, [(config, root, s) for s in seeds], workers)
    return dict(zip(seeds, results))


def _load(root: Path, kind: str, seed: int):
    path = root / kind / str(seed) / "model.ckpt"
    if not path.exists():
        raise MissingArtifactError(
            f"{kind} checkpoint for seed {seed} not found at {path}; run `locunlearn train` first"
        )
    return load_checkpoint(path)[0]


# ----------------------------------------------------------------------- masks


def make_mask(config: ExperimentConfig, strategy: str, alpha: float, model, seed: int):
    """Mask for one strategy; kind ``full`` selects every parameter."""
    s = config.strategy(strategy)
    ctx = data_context(config)
    forget = ctx.forget()
    if s.kind == "full":
        return loc.Mask(np.ones(model.p, dtype=bool), 1.0, "full")
    if s.kind == "del":
        return loc.del_mask(model, forget, alpha, s.h, s.batch_size)
    if s.kind == "salloc":
        return loc.salloc_mask(model, forget, alpha, s.batch_size)
    if s.kind == "criterion":
        crit = loc.Criterion(s.criterion)
        data = {loc.Criterion.WEIGHTED_GRAD_TRAIN: DataView(ctx.train),
                loc.Criterion.WEIGHTS_ONLY: None}.get(crit, forget)
        return loc.criterion_mask(model, data, alpha, crit, s.granularity, s.h, s.batch_size)
    if s.kind in ("deepest", "shallowest"):
        return loc.layer_mask_for_budget(model, alpha, s.kind)
    if s.kind == "critmem":
        return loc.critmem_mask(model, forget, s.max_channels_per_example, alpha)
    if s.kind == "random":
        ref = make_mask(config, s.reference, alpha, model, seed)
        return loc.random_matched_mask(ref, model, s.granularity, seed)
    raise ConfigError(f"unknown strategy kind {s.kind!r}")


# ----------------------------------------------------------------------- cells


def unlearn_cell(config: ExperimentConfig, cell: Cell, original, lr: float | None = None):
    """Run one cell in memory; returns ``(model, mask, outcome, timings)``."""
    ctx = data_context(config)
    t0 = time.perf_counter()
    mask = make_mask(config, cell.strategy, cell.alpha, original, cell.seed)
    t1 = time.perf_counter()
    cfg = config.algorithm(cell.algorithm).unlearn_config(cell.seed, lr)
    outcome = run_algorithm(original, cfg, ctx.retain(), ctx.forget(), mask)
    t2 = time.perf_counter()
    return outcome.model, mask, outcome, {"mask_s": t1 - t0, "unlearn_s": t2 - t1}


def _run_and_save(config: ExperimentConfig, root: Path, cell: Cell, lr=None,
                  resume: bool = False, model_root: Path | None = None) -> dict:
    model_root = root if model_root is None else model_root
    cell_dir = root / cell.relpath()
    manifest_path = cell_dir / "manifest.json"
    if resume:
        existing = _read_manifest(manifest_path)
        if existing is not None:
            existing["skipped"] = True
            return existing
    original = _load(model_root, "original", cell.seed)
    model, mask, outcome, timings = unlearn_cell(config, cell, original, lr)
    save_checkpoint(cell_dir / "model.ckpt", model, cell.seed)
    artifacts = {"checkpoint": "model.ckpt"}
    loc.save_mask(cell_dir / "mask.bin", mask)
    artifacts["mask"] = "mask.bin"
    mask_info = {"popcount": mask.popcount, "p": mask.p, "tag": mask.strategy_tag,
                 "info": mask.info}
    manifest = {
        "status": "complete",
        "config_hash": config.config_hash(),
        "cell": {"strategy": cell.strategy, "algorithm": cell.algorithm,
                 "alpha": cell.alpha, "seed": cell.seed},
        "config_echo": outcome.config_echo.to_dict(),
        "lr": outcome.config_echo.lr,
        "steps": outcome.steps_taken,
        "mask": mask_info,
        "input_checkpoint_sha256": model_digest(original),
        "output_checkpoint_sha256": model_digest(model),
        "wall_time_s": timings,
        "artifacts": artifacts,
        "metrics": "report.json",
    }
    _write_json(manifest_path, manifest)
    return manifest


def cmd_unlearn(config: ExperimentConfig, out=None, dry_run: bool = False, resume: bool = False,
                workers: int = 1, echo=print) -> list:
    """Build the mask and run the algorithm for every (strategy, alpha, algorithm, seed)."""
    cells = run_matrix(config)
    if dry_run:
        for c in cells:
            echo(c.label())
        echo(f"{len(cells)} cells")
        return cells
    root = output_root(config, out)
    for seed in config.seeds:
        _load(root, "original", seed)  # fail early, naming the seed
    return _map(_run_and_save, [(config, root, c, None, resume) for c in cells], workers)


# ------------------------------------------------------------------- evaluation


def _evaluate(config: ExperimentConfig, model, seed: int, run_id: str) -> MetricsReport:
    ctx = data_context(config)
    return evaluate_model(model, ctx.retain(), ctx.forget(), DataView(ctx.test), ctx.calib(seed),
                          run_id, seed, tuple(config.mia_feature_kinds))


def _oracle_report(config: ExperimentConfig, root: Path, seed: int) -> MetricsReport:
    report = _evaluate(config, _load(root, "oracle", seed), seed, f"oracle/{seed}")
    _write_json(root / "oracle" / str(seed) / "report.json", report.to_dict())
    return report


def _evaluate_cell(config: ExperimentConfig, root: Path, cell: Cell) -> MetricsReport:
    path = root / cell.relpath() / "model.ckpt"
    if not path.exists():
        raise MissingArtifactError(f"no unlearned checkpoint for {cell.label()} at {path}; "
                                   "run `locunlearn unlearn` first")
    report = _evaluate(config, load_checkpoint(path)[0], cell.seed, str(cell.relpath()))
    _write_json(path.with_name("report.json"), report.to_dict())
    return report


def _delta_rows(config, cells, reports, oracle_reports) -> tuple:
    groups = {}
    for cell, rep in zip(cells, reports):
        groups.setdefault((cell.strategy, cell.algorithm, cell.alpha), []).append(rep)
    rows, deltas = [], {}
    metrics = [m for m in DELTA_METRICS
               if m not in ("mia", "mia_confidence")
               or ("correctness" if m == "mia" else "confidence") in config.mia_feature_kinds]
    for (strategy, algorithm, alpha), reps in sorted(groups.items()):
        dr = delta_report([oracle_reports[r.seed] for r in reps], reps, metrics)
        deltas[f"{strategy}/{algorithm}/{alpha:g}"] = dr.to_dict()
        for seed, vals in dr.per_seed.items():
            rows.append({"strategy": strategy, "algorithm": algorithm, "alpha": alpha,
                         "seed": seed, "metrics": {f"delta_{k}": v for k, v in vals.items()}})
    return rows, deltas


def cmd_evaluate(config: ExperimentConfig, out=None, workers: int = 1, subdir: str = "") -> list:
    """Evaluate every unlearned model against its seed's oracle; write the summary table."""
    base = output_root(config, out)
    root = base / subdir if subdir else base
    oracle_reports = {s: _oracle_report(config, base, s) for s in config.seeds}
    cells = run_matrix(config)
    reports = _map(_evaluate_cell, [(config, root, c) for c in cells], workers)
    rows, deltas = _delta_rows(config, cells, reports, oracle_reports)
    deltas["oracle_self"] = {
        str(s): delta_report([r], [r]).to_dict()["mean"] for s, r in oracle_reports.items()
    }
    summary = aggregate_runs(rows)
    _write_text(root / "summary.csv", summary_csv(summary))
    _write_json(root / "summary.json", _jsonable(summary))
    _write_json(root / "deltas.json", _jsonable(deltas))
    return summary


def _jsonable(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ------------------------------------------------------------------------ sweep


def _tune_one(config: ExperimentConfig, root: Path, strategy: str, algorithm: str,
              alpha: float, oracle_report: MetricsReport) -> dict:
    """Pick the lr candidate minimising |delta_forget| + |delta_test| on the validation seed."""
    seed = config.validation_seed
    original = _load(root, "original", seed)
    scores = []
    for lr in config.algorithm(algorithm).lr_candidates:
        model, *_ = unlearn_cell(config, Cell(strategy, algorithm, alpha, seed), original, lr)
        rep = _evaluate(config, model, seed, "tuning")
        d = 100 * (oracle_report.forget_acc - rep.forget_acc), 100 * (oracle_report.test_acc - rep.test_acc)
        scores.append({"lr": lr, "delta_forget": d[0], "delta_test": d[1],
                       "objective": abs(d[0]) + abs(d[1])})
    best = min(scores, key=lambda s: s["objective"])  # first candidate wins ties
    return {"strategy": strategy, "algorithm": algorithm, "alpha": alpha,
            "lr": best["lr"], "candidates": scores}


def _sweep_cell(config: ExperimentConfig, base: Path, cell: Cell, lr) -> MetricsReport:
    root = base / "sweep"
    _run_and_save(config, root, cell, lr, model_root=base)
    return _evaluate_cell(config, root, cell)


def cmd_sweep(config: ExperimentConfig, out=None, workers: int = 1, echo=None) -> dict:
    """Budget sweep with per-cell learning-rate selection.

    Trains originals/oracles if missing, tunes lr on ``validation_seed`` for
    every (strategy, alpha, algorithm) whose algorithm lists
    ``lr_candidates``, then runs all seeds with the chosen lr.
    """
    base = output_root(config, out)
    tuning_needed = any(a.lr_candidates for a in config.algorithms)
    needed = list(config.seeds) + ([config.validation_seed] if tuning_needed
                                   and config.validation_seed not in config.seeds else [])
    missing = [s for s in needed
               if not (base / "original" / str(s) / "model.ckpt").exists()
               or not (base / "oracle" / str(s) / "model.ckpt").exists()]
    if missing:
        cmd_train(config, out, workers, seeds=missing)

    combos = [(s.name, a.name, alpha) for s in config.strategies for alpha in s.alphas
              for a in config.algorithms]
    chosen = {}
    tuning = []
    if tuning_needed:
        val_oracle = _evaluate(config, _load(base, "oracle", config.validation_seed),
                               config.validation_seed, "oracle/validation")
        todo = [(config, base, *c, val_oracle) for c in combos
                if config.algorithm(c[1]).lr_candidates]
        tuning = _map(_tune_one, todo, workers)
        for t in tuning:
            chosen[(t["strategy"], t["algorithm"], t["alpha"])] = t["lr"]
            if echo:
                echo(f"tuned {t['strategy']}/{t['algorithm']}/alpha={t['alpha']:g}: lr={t['lr']:g}")

    cells = run_matrix(config)
    lrs = [chosen.get((c.strategy, c.algorithm, c.alpha)) for c in cells]
    reports = _map(_sweep_cell, [(config, base, c, lr) for c, lr in zip(cells, lrs)], workers)
    oracle_reports = {s: _oracle_report(config, base, s) for s in config.seeds}
    rows, deltas = _delta_rows(config, cells, reports, oracle_reports)
    summary = aggregate_runs(rows)
    root = base / "sweep"
    _write_text(root / "summary.csv", summary_csv(summary))
    _write_json(root / "deltas.json", _jsonable(deltas))

    lr_of = {}
    for c, lr in zip(cells, lrs):
        lr_of[(c.strategy, c.algorithm, c.alpha)] = (
            config.algorithm(c.algorithm).lr if lr is None else lr)
    curve = sorted(summary, key=lambda r: (r["alpha"], r["strategy"], r["algorithm"], r["metric"]))
    lines = ["alpha,strategy,algorithm,lr,metric,mean,ci95,n"]
    for r in curve:
        lr = lr_of[(r["strategy"], r["algorithm"], r["alpha"])]
        mean = "n/a" if math.isnan(r["mean"]) else f"{r['mean']:.6f}"
        ci = "n/a" if math.isnan(r["ci95"]) else f"{r['ci95']:.6f}"
        lines.append(f"{r['alpha']:g},{r['strategy']},{r['algorithm']},{lr:g},{r['metric']},"
                     f"{mean},{ci},{r['n']}")
    _write_text(root / "sweep.csv", "\n".join(lines) + "\n")
    _write_json(root / "sweep_manifest.json", _jsonable({
        "status": "complete", "config_hash": config.config_hash(),
        "validation_seed": config.validation_seed if tuning_needed else None,
        "tuning": tuning,
        "chosen_lr": [{"strategy": k[0], "algorithm": k[1], "alpha": k[2], "lr": v}
                      for k, v in sorted(lr_of.items())],
    }))
    return {"summary": summary, "chosen_lr": lr_of, "tuning": tuning, "root": root}


# ---------------------------------------------------------------------- compare


def compare_summaries(path_a, path_b) -> list:
    """Rows present in either CSV whose mean differs (NaN when missing on one side)."""
    a = {(r["strategy"], r["algorithm"], r["alpha"], r["metric"]): r
         for r in read_summary_csv(Path(path_a).read_text())}
    b = {(r["strategy"], r["algorithm"], r["alpha"], r["metric"]): r
         for r in read_summary_csv(Path(path_b).read_text())}
    diffs = []
    for key in sorted(set(a) | set(b)):
        ma = a[key]["mean"] if key in a else math.nan
        mb = b[key]["mean"] if key in b else math.nan
        same = (ma == mb) or (math.isnan(ma) and math.isnan(mb) and key in a and key in b)
        if not same:
            diffs.append({"strategy": key[0], "algorithm": key[1], "alpha": key[2],
                          "metric": key[3], "a": ma, "b": mb, "diff": mb - ma})
    return diffs


__all__ = [
    "Cell",
    "cmd_evaluate",
    "cmd_sweep",
    "cmd_train",
    "cmd_unlearn",
    "compare_summaries",
    "data_context",
    "make_mask",
    "output_root",
    "run_matrix",
]
