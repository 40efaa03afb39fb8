"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .evalkit import validate_report
from .experiment import SWEEP_AXES, cmd_eval, cmd_gen_data, cmd_sweep, cmd_train
from .scorer import KINDS

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _config(args) -> ExperimentConfig:
    if args.config is None:
        cfg = ExperimentConfig()
        return cfg.with_seed(args.seed) if args.seed is not None else cfg
    return load_config(args.config, seed=args.seed)


def _score_fns(raw: str | None):
    if raw is None:
        return None
    kinds = [k.strip() for k in raw.split(",") if k.strip()]
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise ConfigError(f"--score-fns must name some of {KINDS}")
    return kinds


def _grid_value(raw: str):
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="godin", description="Out-of-distribution detection without OoD data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", type=Path, help="INI or JSON experiment config")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
        sp.add_argument("--out", type=Path, help=out_help)

    sp = sub.add_parser("train", help="generate data, train, write checkpoint + history")
    common(sp, "root directory for the run (default: config output_dir)")

    sp = sub.add_parser("eval", help="select epsilon and evaluate every score function")
    sp.add_argument("checkpoint", type=Path)
    sp.add_argument("--score-fns", help=f"comma-separated subset of {','.join(KINDS)}")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--preprocessing", dest="preprocessing", action="store_true", default=None)
    g.add_argument("--no-preprocessing", dest="preprocessing", action="store_false")
    sp.add_argument("--out", type=Path, help="root directory for the report")

    sp = sub.add_parser("sweep", help="train+eval over a grid of one setting")
    common(sp, "root directory for the sweep")
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--grid", required=True, help="comma-separated values")

    sp = sub.add_parser("gen-data", help="write the benchmark as CSV")
    common(sp, "output CSV path")

    sp = sub.add_parser("report", help="validate a report and print its metrics")
    sp.add_argument("report", type=Path)
    return p


def _print_report(doc: dict) -> None:
    print(f"config_hash {doc['config_hash']}  seed {doc['seed']}")
    print(f"{'score_fn':<12} {'ood_set':<16} {'epsilon':>8} {'AUROC':>7} {'TNR@95':>7}")
    for r in doc["results"]:
        print(f"{r['score_fn']:<12} {r['ood_set']:<16} {r['epsilon']:>8.5f} "
              f"{r['auroc']:>7.4f} {r['tnr_at_tpr95']:>7.4f}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail("usage", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            print(cmd_train(_config(args), args.out))
        elif args.command == "eval":
            print(cmd_eval(args.checkpoint, _score_fns(args.score_fns), args.preprocessing, args.out))
        elif args.command == "sweep":
            grid = [_grid_value(v.strip()) for v in args.grid.split(",") if v.strip()]
            print(cmd_sweep(_config(args), args.axis, grid, args.out))
        elif args.command == "gen-data":
            out = args.out or Path("dataset.csv")
            print(cmd_gen_data(_config(args), out))
        elif args.command == "report":
            doc = json.loads(args.report.read_text())
            validate_report(doc)
            _print_report(doc)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_USAGE)
    except Exception as exc:  # noqa: BLE001
        return _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
