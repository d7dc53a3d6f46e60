"""Flat key=value run configuration and the generate/train/evaluate pipeline.

Every setting lives in :data:`SCHEMA`; a config file may set any subset and
command-line flags override the file.  ``preset`` seeds lambda/tau before
explicit keys are applied.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, SyntheticSpec, compute_stats, generate, load_csv
from .errors import ParseError, ValidationError
from .evaluate import EvalReport, GroupSpec, evaluate, write_per_class_csv
from .model import ModelParams, init_params, save_checkpoint
from .streams import stream
from .train import PRESETS, TrainConfig, TrainLog, crt_second_stage, train

log = logging.getLogger(__name__)


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text):
    text = str(text).strip()
    return None if text in ("", "none", "None") else text


# key -> (parser, default, help)
SCHEMA = {
    "preset": (_opt_str, None, f"lambda/tau regime: {', '.join(sorted(PRESETS))}"),
    "method": (str, "ce_only", "ce_only | pc | ace"),
    "lambda": (float, 2.0, "weight of the regularizer"),
    "tau": (float, 0.0, "adaptive-matrix exponent hyper-parameter"),
    "eta": (float, 1.0, "tether weight for the learnable adaptive matrix"),
    "learnable_a": (parse_bool, False, "learn the adaptive diagonal"),
    "sampler": (str, "instance_balanced", "instance_balanced | distinct_class | class_balanced"),
    "bcn_path": (str, "trace_fast", "trace_fast | svd_reference"),
    "epochs": (int, 30, "training epochs"),
    "batch_size": (int, 16, "batch size"),
    "lr": (float, 0.05, "initial learning rate"),
    "momentum": (float, 0.9, "SGD momentum"),
    "seed": (int, 0, "master seed for data, init and sampler streams"),
    "arch": (str, "mlp", "linear | mlp"),
    "hidden": (int, 64, "hidden width of the mlp"),
    "train_csv": (_opt_str, None, "train features CSV (replaces synthetic data)"),
    "test_csv": (_opt_str, None, "test features CSV"),
    "classes": (int, 30, "synthetic: number of classes"),
    "meta": (int, 5, "synthetic: number of meta-categories"),
    "dim": (int, 64, "synthetic: feature dimension"),
    "delta": (float, 0.15, "synthetic: fine-grained scale (smaller = more alike)"),
    "ratio": (float, 100.0, "synthetic: imbalance ratio"),
    "max_count": (int, 200, "synthetic: samples in the largest class"),
    "noise": (float, 0.1, "synthetic: per-feature noise std"),
    "test_per_class": (int, 50, "synthetic: test samples per class"),
    "groups": (str, "percentile", "percentile | absolute"),
    "group_hi": (float, 1 / 3, "Many threshold (fraction or count)"),
    "group_lo": (float, 1 / 3, "Few threshold (fraction or count)"),
    "crt_epochs": (int, 0, "epochs of classifier retraining after stage 1 (0 = off)"),
    "out_dir": (str, "runs/latest", "artifact directory"),
}

SWEEPABLE = {"lambda", "tau", "eta", "delta", "ratio"}


def parse_value(key: str, text):
    if key not in SCHEMA:
        raise ValidationError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(SCHEMA))}")
    try:
        return SCHEMA[key][0](text)
    except ValueError as exc:
        raise ValidationError(f"bad value for {key}: {exc}") from None


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key = value, got {line!r}", line=lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in SCHEMA:
                raise ParseError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(SCHEMA))}", line=lineno)
            out[key] = parse_value(key, value)
    return out


def write_config(settings: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in SCHEMA:
            value = settings.get(key)
            fh.write(f"{key} = {'' if value is None else _fmt(value)}\n")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolve(explicit: dict) -> dict:
    """Defaults, then preset values, then explicitly given keys."""
    settings = {k: v[1] for k, v in SCHEMA.items()}
    preset = explicit.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        settings["method"] = "ace"
        settings["lambda"] = PRESETS[preset]["lam"]
        settings["tau"] = PRESETS[preset]["tau"]
    settings.update({k: v for k, v in explicit.items() if v is not None})
    return settings


def train_config(s: dict, epochs: int | None = None) -> TrainConfig:
    return TrainConfig(
        epochs=s["epochs"] if epochs is None else epochs,
        batch_size=s["batch_size"],
        lr=s["lr"],
        momentum=s["momentum"],
        lam=s["lambda"],
        tau=s["tau"],
        eta=s["eta"],
        learnable_a=s["learnable_a"],
        sampler=s["sampler"],
        method=s["method"],
        bcn_path=s["bcn_path"],
        seed=s["seed"],
    )


def synthetic_spec(s: dict) -> SyntheticSpec:
    return SyntheticSpec(
        num_classes=s["classes"],
        num_meta=s["meta"],
        feature_dim=s["dim"],
        fine_grained_scale=s["delta"],
        imbalance_ratio=s["ratio"],
        max_count=s["max_count"],
        noise_std=s["noise"],
        test_per_class=s["test_per_class"],
        seed=s["seed"],
    )


def group_spec(s: dict) -> GroupSpec:
    return GroupSpec(s["groups"], s["group_hi"], s["group_lo"])


def load_data(s: dict) -> tuple[Dataset, Dataset]:
    if (s["train_csv"] is None) != (s["test_csv"] is None):
        raise ValidationError("train_csv and test_csv must be given together")
    if s["train_csv"] is None:
        return generate(synthetic_spec(s))
    tr = load_csv(s["train_csv"], "train")
    te = load_csv(s["test_csv"], "test")
    C = max(tr.num_classes, te.num_classes)
    tr.num_classes = te.num_classes = C
    if tr.feature_dim != te.feature_dim:
        raise ValidationError("train and test CSVs have different feature counts")
    return tr, te


@dataclass
class RunResult:
    settings: dict
    params: ModelParams
    log: TrainLog
    adaptive: object
    report: EvalReport
    stage1_report: EvalReport | None = None


def run(settings: dict, out_dir=None) -> RunResult:
    """Generate or load data, train, optionally retrain the classifier, evaluate.

    With ``out_dir`` the manifest is written first, then the checkpoint,
    JSONL log, JSON report and per-class CSV.
    """
    s = dict(settings)
    cfg = train_config(s)
    gspec = group_spec(s)
    train_ds, test_ds = load_data(s)
    stats = compute_stats(train_ds, gspec)

    out = None
    manifest = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "tool": "confusion_energy",
            "version": __version__,
            "seed": s["seed"],
            "config": s,
            "dataset_stats": stats.to_dict(),
            "artifacts": {
                "config": "config.txt",
                "checkpoint": "model.ckpt",
                "train_log": "train_log.jsonl",
                "report": "report.json",
                "per_class": "per_class.csv",
            },
            "status": "running",
        }
        write_config(s, out / "config.txt")
        _write_json(manifest, out / "manifest.json")

    params = init_params(train_ds.feature_dim, train_ds.num_classes, stream(s["seed"], "init"), s["arch"], s["hidden"])
    log.info("training %s for %d epochs on %d samples", cfg.method, cfg.epochs, len(train_ds))
    params, tlog, A = train(params, train_ds, test_ds, cfg)
    counts = train_ds.class_counts
    report = evaluate(params, test_ds, counts, gspec, tlog)
    stage1 = None
    if s["crt_epochs"] > 0:
        stage1 = report
        params = crt_second_stage(params, train_ds, train_config(s, epochs=s["crt_epochs"]))
        report = evaluate(params, test_ds, counts, gspec, tlog)
        report.extra["stage1"] = stage1.to_dict()
    if A is not None:
        report.extra["adaptive_matrix"] = {"initial": A.frozen_reference.tolist(), "final": A.diag.tolist()}

    if out is not None:
        save_checkpoint(params, out / "model.ckpt")
        (out / "train_log.jsonl").write_text(tlog.to_jsonl(), encoding="utf-8")
        _write_json(report.to_dict(), out / "report.json")
        write_per_class_csv(report, counts, gspec, out / "per_class.csv")
        manifest["status"] = "complete"
        manifest["result"] = {"top1_total": report.top1_total, "top1_by_group": report.top1_by_group}
        if A is not None:
            manifest["eta"] = cfg.eta
            manifest["learnable_a"] = cfg.learnable_a
            manifest["A_initial"] = A.frozen_reference.tolist()
            manifest["A_final"] = A.diag.tolist()
            if cfg.learnable_a:
                manifest["A_hat_snapshots"] = "train_log.jsonl:A_hat"
        _write_json(manifest, out / "manifest.json")
    return RunResult(s, params, tlog, A, report, stage1)


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


SWEEP_COLUMNS = ("value", "total", "many", "median", "few")


def sweep(settings: dict, param: str, values) -> list[dict]:
    if param not in SWEEPABLE:
        raise ValidationError(f"cannot sweep {param!r}; choose from {sorted(SWEEPABLE)}")
    values = list(values)
    if not values:
        raise ValidationError("sweep needs at least one value")
    rows = []
    for v in values:
        res = run({**settings, param: float(v)})
        g = res.report.top1_by_group
        rows.append({"value": float(v), "total": res.report.top1_total, **g})
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join("" if r[c] is None else repr(float(r[c])) for c in SWEEP_COLUMNS) + "\n")


def read_sweep_csv(path) -> list[dict]:
    """Inverse of :func:`write_sweep_csv`; blank cells (empty groups) become None."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != SWEEP_COLUMNS:
            raise ParseError(f"sweep header must be {','.join(SWEEP_COLUMNS)}", line=1)
        for lineno, line in enumerate(fh, start=2):
            cells = line.rstrip("\n").split(",")
            if len(cells) != len(SWEEP_COLUMNS):
                raise ParseError(f"expected {len(SWEEP_COLUMNS)} cells", line=lineno)
            try:
                rows.append({c: (None if x == "" else float(x)) for c, x in zip(SWEEP_COLUMNS, cells)})
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
    return rows
