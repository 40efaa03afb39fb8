"""Train / evaluate / sweep pipelines and their on-disk artifacts."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .evalkit import DetectionReport, evaluate
from .model import CheckpointError, Model, load_checkpoint, save_checkpoint
from .perturb import select_epsilon
from .scorer import make_score_fn
from .shiftbench import OOD_TAGS, LabeledSet, generate, write_csv
from .trainer import TrainHistory, train

log = logging.getLogger(__name__)

SWEEP_AXES = ("num_samples", "num_classes", "head_variant", "dropout")


def _stamp(cfg: ExperimentConfig) -> str:
    return f"config_hash={cfg.config_hash} seed={cfg.seed}"


def new_run_dir(root, prefix: str) -> Path:
    """Create a fresh timestamped directory; never reuses an existing one."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    base = f"{prefix}-{datetime.now(timezone.utc).strftime('%Y%m%dT%H%M%S')}"
    path, i = root / base, 1
    while path.exists():
        path = root / f"{base}-{i}"
        i += 1
    path.mkdir()
    return path


def applicable(kind: str, cfg: ExperimentConfig) -> bool:
    return kind != "deconf-g" or cfg.head_spec().g_enabled


def train_model(cfg: ExperimentConfig, sets: dict[str, LabeledSet] | None = None
                ) -> tuple[Model, TrainHistory, dict[str, LabeledSet]]:
    sets = generate(cfg.bench) if sets is None else sets
    model = Model(cfg.backbone_spec(), cfg.head_spec(), seed=cfg.model_seed)
    tr, va = sets["train"], sets["val"]
    model, history = train(model, tr.inputs, tr.labels, cfg.train, val=(va.inputs, va.labels))
    return model, history, sets


def evaluate_model(model: Model, cfg: ExperimentConfig, sets: dict[str, LabeledSet],
                   score_fns=None, preprocessing: bool | None = None,
                   ood_tags=OOD_TAGS) -> DetectionReport:
    score_fns = list(cfg.score_fns if score_fns is None else score_fns)
    preprocessing = cfg.preprocessing if preprocessing is None else preprocessing
    report = DetectionReport(cfg.config_hash, cfg.seed, config=cfg.to_dict())
    ood_sets = {tag: sets[tag] for tag in ood_tags}
    for kind in score_fns:
        if not applicable(kind, cfg):
            raise ConfigError(f"score {kind} needs a divisor head; variant is {cfg.model.variant}")
        fn = make_score_fn(kind, model, sets["train"])
        if preprocessing:
            search = select_epsilon(model, sets["val"], fn)
            eps = search.epsilon
            report.epsilon_search[kind] = {
                "epsilon": eps, "plain": False, "best_epsilon": search.best_epsilon,
                "grid": search.grid, "mean_scores": search.mean_scores,
            }
        else:
            eps = 0.0
            report.epsilon_search[kind] = {"epsilon": 0.0, "plain": True, "best_epsilon": None}
        report.entries.extend(evaluate(model, fn, eps, sets["val"], ood_sets, plain=not preprocessing))
    return report


def cmd_train(cfg: ExperimentConfig, out_root=None) -> Path:
    run_dir = new_run_dir(out_root or cfg.output_dir, "train")
    model, history, _ = train_model(cfg)
    extra = {"config": cfg.to_dict(), "config_hash": cfg.config_hash}
    ckpt = save_checkpoint(model, run_dir / "checkpoint.json", extra)
    history.to_csv(run_dir / "history.csv", header=_stamp(cfg))
    (run_dir / "config.json").write_text(
        json.dumps({**cfg.to_dict(), "config_hash": cfg.config_hash}, sort_keys=True, indent=1) + "\n"
    )
    log.info("wrote %s", ckpt)
    return ckpt


def load_run(checkpoint) -> tuple[Model, ExperimentConfig]:
    model, doc = load_checkpoint(checkpoint)
    if "config" not in doc:
        raise CheckpointError("checkpoint carries no experiment config")
    cfg = ExperimentConfig.from_dict(doc["config"])
    if doc.get("config_hash") != cfg.config_hash:
        raise CheckpointError("checkpoint config hash does not match its embedded config")
    return model, cfg


def cmd_eval(checkpoint, score_fns=None, preprocessing: bool | None = None, out_dir=None) -> Path:
    model, cfg = load_run(checkpoint)
    if score_fns is not None:
        cfg = replace(cfg, score_fns=list(score_fns))
    if preprocessing is not None:
        cfg = replace(cfg, preprocessing=preprocessing)
    cfg.validate()
    sets = generate(cfg.bench)
    report = evaluate_model(model, cfg, sets)
    run_dir = new_run_dir(out_dir or Path(checkpoint).parent, "eval")
    write_report(report, run_dir)
    return run_dir / "report.json"


def write_report(report: DetectionReport, run_dir) -> Path:
    run_dir = Path(run_dir)
    report.write(run_dir / "report.json")
    report.write_scores_csv(run_dir / "scores.csv")
    report.write_histograms_csv(run_dir / "histograms.csv")
    with (run_dir / "epsilon_curves.csv").open("w", newline="") as fh:
        fh.write(f"# config_hash={report.config_hash} seed={report.seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["score_fn", "epsilon", "mean_score"])
        for kind, search in report.epsilon_search.items():
            for eps, m in zip(search.get("grid", []), search.get("mean_scores", [])):
                writer.writerow([kind, repr(eps), repr(m)])
    return run_dir


def cmd_gen_data(cfg: ExperimentConfig, path) -> Path:
    return write_csv(generate(cfg.bench), path, header=_stamp(cfg))


def sweep_point(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "num_samples":
        return replace(cfg, bench=replace(cfg.bench, train_per_class=int(value)))
    if axis == "num_classes":
        return replace(cfg, bench=replace(cfg.bench, num_id_classes=int(value)))
    if axis == "head_variant":
        return replace(cfg, model=replace(cfg.model, variant=str(value)))
    if axis == "dropout":
        return replace(cfg, model=replace(cfg.model, head_dropout_rate=float(value)))
    raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")


def point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, 41, index]).generate_state(1)[0])


def cmd_sweep(cfg: ExperimentConfig, axis: str, grid, out_root=None) -> Path:
    """Train and evaluate one model per grid value; one summary row per point.

    The benchmark seed is shared by every point so the OoD sets stay
    comparable; each point trains from its own derived seed.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not grid:
        raise ConfigError("sweep grid is empty")
    sweep_dir = new_run_dir(out_root or cfg.output_dir, f"sweep-{axis}")
    rows = []
    for i, value in enumerate(grid):
        row = {"point": i, "axis": axis, "value": value, "train_seed": "", "status": "ok", "error": ""}
        try:
            point = sweep_point(cfg, axis, value)
            point = replace(point, train=replace(point.train, seed=point_seed(cfg.seed, i)))
            point.validate()
            row["train_seed"] = point.train.seed
            point_dir = sweep_dir / f"point-{i:03d}"
            point_dir.mkdir()
            model, history, sets = train_model(point)
            save_checkpoint(model, point_dir / "checkpoint.json",
                            {"config": point.to_dict(), "config_hash": point.config_hash})
            history.to_csv(point_dir / "history.csv", header=_stamp(point))
            kinds = [k for k in point.score_fns if applicable(k, point)]
            report = evaluate_model(model, point, sets, score_fns=kinds)
            write_report(report, point_dir)
            for kind in kinds:
                entries = [e for e in report.entries if e.score_fn == kind]
                row[f"mean_auroc:{kind}"] = repr(float(np.mean([e.auroc for e in entries])))
                row[f"mean_tnr95:{kind}"] = repr(float(np.mean([e.tnr_at_tpr95 for e in entries])))
        except Exception as exc:  # noqa: BLE001  a failing point must not stop the sweep
            log.warning("sweep point %d (%s=%s) failed: %s", i, axis, value, exc)
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    metric_cols = []
    for kind in cfg.score_fns:
        metric_cols += [f"mean_auroc:{kind}", f"mean_tnr95:{kind}"]
    cols = ["point", "axis", "value", "train_seed", "status", "error"] + metric_cols
    summary = sweep_dir / "summary.csv"
    with summary.open("w", newline="") as fh:
        fh.write(f"# {_stamp(cfg)} axis={axis}\n")
        writer = csv.DictWriter(fh, fieldnames=cols, restval="", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return summary
