"""Command line entry point: ``metatrust {run,ablate,replay,report,validate}``.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 incomplete
artifacts on report.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from metatrust.errors import ArtifactError, ConfigError, DataQualityError
from metatrust.harness.config import PROFILES, load_config
from metatrust.harness.replay import replay_trace
from metatrust.harness.report import emit_report
from metatrust.harness.runner import run_ablation, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ARTIFACTS = 0, 1, 2, 3

log = logging.getLogger("metatrust")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--profile", choices=sorted(PROFILES), help="built-in profile the config is layered on")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--seeds", help="seed count (e.g. 5) or list (e.g. 1,2,7)")
    p.add_argument("--quiet", action="store_true", help="only print errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metatrust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="train every configured variant over every seed"))
    _common(sub.add_parser("ablate", help="paired comparison of two or more variants"))
    _common(sub.add_parser("validate", help="check a config and print its effective values"))
    p = sub.add_parser("replay", help="feed a VPES trace through a controller")
    _common(p)
    p.add_argument("trace", type=Path)
    p.add_argument("--variant", default="full_meta")
    p.add_argument("--base-lr", type=float, default=1.0)
    p = sub.add_parser("report", help="charts and tables from a run or experiment directory")
    p.add_argument("directory", type=Path)
    p.add_argument("--quiet", action="store_true")
    return parser


def _config(args):
    overrides = {}
    if getattr(args, "out", None):
        overrides["out"] = args.out
    if getattr(args, "seeds", None):
        overrides["seeds"] = args.seeds
    profile = args.profile
    if profile is None and args.config is None:
        profile = "desk"
    return load_config(args.config, profile_name=profile, overrides=overrides)


def _progress(quiet):
    if quiet:
        return None

    def show(rec):
        status = "DIVERGED" if rec.diverged else f"last eval {rec.eval_returns[-1]:.2f}" if rec.eval_returns else ""
        print(f"  {rec.variant:<22} seed {rec.seed:<4} {status}", flush=True)

    return show


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    say = (lambda *a: None) if args.quiet else print
    try:
        if args.command == "report":
            for p in emit_report(args.directory):
                say(p)
            return EXIT_OK
        cfg = _config(args)
        if args.command == "validate":
            say(json.dumps(cfg.echo(), indent=2))
            return EXIT_OK
        if args.command == "replay":
            kind = args.variant
            out = Path(cfg.out)
            out.mkdir(parents=True, exist_ok=True)
            dest = out / f"replay_{kind}.log"
            outputs = replay_trace(args.trace, kind, args.base_lr, cfg.controller, dest)
            for o in outputs:
                say(json.dumps(o.to_dict()))
            return EXIT_OK
        if args.command == "run":
            say(f"experiment {cfg.name}: {len(cfg.variants)} variant(s) x {len(cfg.seeds)} seed(s), "
                f"{cfg.n_iterations} iterations each")
            run_experiment(cfg, _progress(args.quiet))
            say(Path(cfg.out) / cfg.name / "comparison.csv")
            return EXIT_OK
        if args.command == "ablate":
            result = run_ablation(cfg, _progress(args.quiet))
            say((Path(cfg.out) / cfg.name / "comparison.csv").read_text(), end="")
            say(f"bootstrap rank stability: {result['bootstrap_rank_stability']}")
            say(f"paired corruption streams identical: {result['paired_noise_identical']}")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactError as exc:
        print(f"incomplete artifacts: {exc}", file=sys.stderr)
        return EXIT_ARTIFACTS
    except (DataQualityError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
