"""Command line entry point ``qd-forge``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..autodiff import ConfigurationError
from .artifacts import SnapshotError, load_model, read_archive
from .config import dump_config, load_config, parse_config_text
from .render import render_decoded_centers, render_elite_grid
from .runner import ARCHIVE_FILE, CONFIG_FILE, MODEL_FILE, ground_truth_bounds, run_experiment
from .summarize import AlignmentError, summarize, write_summary

log = logging.getLogger("qd_forge")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qd-forge", description="Quality-diversity experiment runner.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config", help="config file")
    r.add_argument("--seed", type=int, help="override [experiment] seed")
    r.add_argument("--eval-workers", type=int, help="evaluation threads (results do not depend on it)")
    r.add_argument("--out", help="run directory (default: $QD_FORGE_OUT/<name>-seed<seed>)")
    r.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key; repeatable")

    v = sub.add_parser("validate-config", help="check a config and print its canonical form")
    v.add_argument("config")
    v.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    v.add_argument("--quiet", action="store_true", help="only report errors")

    d = sub.add_parser("render", help="write an SVG from a run directory")
    d.add_argument("run_dir")
    d.add_argument("--what", choices=("elite-grid", "decoded-centers"), default="elite-grid")
    d.add_argument("--bins", type=int, nargs=2, default=(8, 8), metavar=("NX", "NY"))
    d.add_argument("--output", help="SVG path (default: <run_dir>/<what>.svg)")

    s = sub.add_parser("summarize", help="median and quartiles across run directories")
    s.add_argument("runs", nargs="+")
    s.add_argument("--output", help="CSV path (default: stdout)")
    return p


def _cmd_run(args) -> int:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"experiment.seed={args.seed}")
    cfg = load_config(args.config, overrides)
    art = run_experiment(cfg, args.out, args.eval_workers)
    print(art.directory)
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config, args.set)
    if not args.quiet:
        sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def _cmd_render(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = parse_config_text((run_dir / CONFIG_FILE).read_text(), source=str(run_dir / CONFIG_FILE))
    out = Path(args.output) if args.output else run_dir / f"{args.what}.svg"
    if args.what == "decoded-centers":
        if cfg.environment.kind == "arm":
            raise ConfigurationError(
                "decoded-centers is not supported for the arm: its raw record is a flat joint vector"
            )
        model_path = run_dir / MODEL_FILE
        if not model_path.exists():
            raise ConfigurationError(f"{run_dir} has no {MODEL_FILE}; decoded-centers needs a learned model")
        render_decoded_centers(load_model(model_path), out)
    else:
        snap = read_archive(run_dir / ARCHIVE_FILE)
        # the arm view uses its first two joints, the constrained pair
        render_elite_grid(snap.members, ground_truth_bounds(cfg), out, bins=args.bins, dims=(0, 1))
    print(out)
    return EXIT_OK


def _cmd_summarize(args) -> int:
    header, rows = summarize(args.runs)
    if args.output:
        write_summary(args.output, header, rows)
        print(args.output)
    else:
        write_summary(sys.stdout, header, rows)
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "validate-config": _cmd_validate, "render": _cmd_render, "summarize": _cmd_summarize}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"qd-forge: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AlignmentError, SnapshotError, FileNotFoundError) as exc:
        print(f"qd-forge: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except RuntimeError as exc:
        print(f"qd-forge: run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
