"""Command-line entry point: ``earlybird <stage> [--config F] [--seed N] [--out DIR] [--variant V]``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
import argparse
import sys

from . import stages
from .config import load_config, parse_variant
from .errors import ConfigError, DataError, GeometryError, MissingUpstreamArtifact

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

COMMANDS = stages.STAGES + ("pipeline", "ablation")


def build_parser():
    ap = argparse.ArgumentParser(prog="earlybird", description="Opposing-view loop closure pipeline.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage" if name in stages.STAGES else None)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.add_argument("--out", help="override output.dir")
        if name == "ablation":
            p.add_argument("--variant", action="append",
                           help="variant to include (repeatable or comma-separated); default ablation.variants")
        else:
            p.add_argument("--variant", help="override descriptor.variant")
        if name == "pipeline":
            p.add_argument("--all", action="store_true",
                           help="run every stage including simulate (the default unless dataset.path is set)")
    return ap


def _run(args):
    cfg = load_config(args.config)
    variant = args.variant if args.command != "ablation" else None
    cfg = cfg.with_overrides(seed=args.seed, output_dir=args.out, variant=variant)
    if cfg.seed < 0:
        raise ConfigError("--seed", "must be non-negative")
    if args.command == "pipeline":
        path = stages.run_pipeline(cfg, simulate_first=args.all or cfg.dataset_path is None)
        print(path)
    elif args.command == "ablation":
        tags = None
        if args.variant:
            tags = [parse_variant("--variant", t) for v in args.variant for t in v.replace(",", " ").split()]
            if not tags:
                raise ConfigError("--variant", "needs at least one variant")
        for v, m in stages.ablation(cfg, tags):
            print(f"{v}: recall={m['recall']:.4f} inliers={m['inliers_median']:.1f} "
                  f"ate={m['ate_optimized']:.4f}/{m['ate_odometry']:.4f}")
    else:
        out = stages.run_stage(args.command, cfg)
        if isinstance(out, str):
            print(out)
    return EXIT_OK


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which is also the config-error code
        return int(exc.code or 0)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingUpstreamArtifact, DataError, GeometryError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
