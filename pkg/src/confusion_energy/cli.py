"""Command-line entry point: gen-data, stats, train, sweep, grad-check.

Exit codes: 0 success, 1 validation/config error, 2 numerical failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .data import SyntheticSpec, compute_stats, generate, load_csv, save_csv
from .errors import NumericalError, ValidationError
from .evaluate import GroupSpec
from .experiment import (
    SCHEMA,
    SWEEPABLE,
    parse_value,
    read_config,
    resolve,
    run,
    sweep,
    write_sweep_csv,
)
from .gradcheck import TOLERANCE, run_grad_check

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors (exit 1), not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        if "unrecognized arguments" in message:
            message += "; valid setting keys: " + ", ".join("--" + k.replace("_", "-") for k in SCHEMA)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--manifest", help="rerun exactly the configuration recorded in a manifest.json")
    group = p.add_argument_group("settings (override the config file)")
    for key, (parser, default, help_text) in SCHEMA.items():
        flag = "--" + key.replace("_", "-")
        if parser.__name__ == "parse_bool":
            group.add_argument(flag, dest=key, nargs="?", const="true", default=None, help=help_text)
        else:
            group.add_argument(flag, dest=key, default=None, help=f"{help_text} (default: {default})")


def _explicit_settings(args) -> dict:
    explicit = {}
    if args.manifest:
        with open(args.manifest, encoding="utf-8") as fh:
            recorded = json.load(fh)["config"]
        unknown = set(recorded) - set(SCHEMA)
        if unknown:
            raise ValidationError(f"manifest has unknown keys {sorted(unknown)}")
        explicit.update(recorded)
    if args.config:
        explicit.update(read_config(args.config))
    for key in SCHEMA:
        value = getattr(args, key)
        if value is not None:
            explicit[key] = parse_value(key, value)
    return explicit


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes,
        num_meta=args.meta,
        feature_dim=args.dim,
        fine_grained_scale=args.delta,
        imbalance_ratio=args.ratio,
        max_count=args.max_count,
        noise_std=args.noise,
        test_per_class=args.test_per_class,
        seed=args.seed,
    )
    train_ds, test_ds = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(train_ds, out / "train.csv")
    save_csv(test_ds, out / "test.csv")
    stats = compute_stats(train_ds).to_dict()
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps({"train": str(out / "train.csv"), "test": str(out / "test.csv"), **stats}, sort_keys=True))
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = load_csv(args.dataset)
    gspec = GroupSpec(args.groups, args.group_hi, args.group_lo)
    print(json.dumps(compute_stats(ds, gspec).to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    settings = resolve(_explicit_settings(args))
    res = run(settings, settings["out_dir"])
    summary = {
        "out_dir": settings["out_dir"],
        "method": settings["method"],
        "top1_total": res.report.top1_total,
        "top1_by_group": res.report.top1_by_group,
        "final_val_acc": res.log.records[-1]["val_acc"],
        "train_val_gap": res.report.train_val_gap,
        "weight_norm_flatness": res.report.weight_norm_stats["flatness"],
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    settings = resolve(_explicit_settings(args))
    values = [v for v in args.values.split(",") if v.strip()]
    try:
        values = [float(v) for v in values]
    except ValueError as exc:
        raise ValidationError(f"bad sweep value: {exc}") from None
    rows = sweep(settings, args.param, values)
    write_sweep_csv(rows, args.out)
    for r in rows:
        print(", ".join(f"{k}={'-' if v is None else f'{v:.4f}'}" for k, v in r.items()))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.trials < 1:
        raise ValidationError("trials must be >= 1")
    errors = run_grad_check(args.seed, args.trials)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:22s} max_rel_err={err:.3e} {'ok' if err <= TOLERANCE else 'FAIL'}")
    print(f"tolerance {TOLERANCE:.0e}; trials {args.trials}; seed {args.seed}")
    return EXIT_OK if worst <= TOLERANCE else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ace-exp", description="Adaptive confusion energy experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic train/test CSVs and stats")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--meta", type=int, default=2)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--delta", type=float, default=0.15)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--max-count", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--test-per-class", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("stats", help="imbalance ratio and fine-grained factor of a CSV dataset")
    p.add_argument("dataset")
    p.add_argument("--groups", default="percentile")
    p.add_argument("--group-hi", type=float, default=1 / 3)
    p.add_argument("--group-lo", type=float, default=1 / 3)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train, evaluate and write run artifacts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="one run per value of a hyper-parameter")
    _add_config_flags(p)
    p.add_argument("--param", required=True, choices=sorted(SWEEPABLE))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grad-check", help="finite-difference check of all analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
