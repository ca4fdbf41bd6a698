"""Command-line entry point: ``locunlearn {train,unlearn,evaluate,sweep,compare}``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .config import load_config
from .errors import ConfigError, LocUnlearnError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locunlearn",
                                description="Localized machine unlearning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, dry=False, resume=False):
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--seed-override", type=int, nargs="+", metavar="SEED",
                        help="run these seeds instead of the config's list")
        sp.add_argument("--workers", type=int, default=1, metavar="N")
        sp.add_argument("--out", metavar="DIR",
                        help=f"output root (default: ${harness.ENV_OUT}, then the config)")
        if dry:
            sp.add_argument("--dry-run", action="store_true", help="print the run matrix only")
        if resume:
            sp.add_argument("--resume", action="store_true", help="skip completed cells")

    common(sub.add_parser("train", help="train original models and retrain oracles"))
    common(sub.add_parser("unlearn", help="build masks and run unlearning for every cell"),
           dry=True, resume=True)
    common(sub.add_parser("evaluate", help="evaluate unlearned models against oracles"))
    common(sub.add_parser("sweep", help="budget sweep with per-cell lr selection"))
    cmp_ = sub.add_parser("compare", help="diff two summary CSVs")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    return p


def _fmt(x: float) -> str:
    return f"{x:+.4f}"


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            diffs = harness.compare_summaries(args.a, args.b)
            for d in diffs:
                print(f"{d['strategy']},{d['algorithm']},{d['alpha']:g},{d['metric']}: "
                      f"{d['a']:.6f} -> {d['b']:.6f} ({_fmt(d['diff'])})")
            print(f"{len(diffs)} differing rows")
            return EXIT_OK
        config = load_config(args.config)
        if args.seed_override:
            config = config.with_seeds(args.seed_override)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        root = harness.output_root(config, args.out)
        if args.command == "train":
            harness.cmd_train(config, args.out, args.workers)
            print(f"trained {len(config.seeds)} seed(s) -> {root}")
        elif args.command == "unlearn":
            done = harness.cmd_unlearn(config, args.out, args.dry_run, args.resume, args.workers)
            if not args.dry_run:
                skipped = sum(1 for m in done if m.get("skipped"))
                print(f"{len(done)} cells ({skipped} skipped) -> {root}")
        elif args.command == "evaluate":
            summary = harness.cmd_evaluate(config, args.out, args.workers)
            print(f"{len(summary)} summary rows -> {root / 'summary.csv'}")
        elif args.command == "sweep":
            res = harness.cmd_sweep(config, args.out, args.workers, echo=print)
            print(f"{len(res['summary'])} summary rows -> {res['root'] / 'sweep.csv'}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LocUnlearnError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
