"""Command-line driver.

    spectrabench <command> [--config cfg.json] [--out DIR] [--seed N]
                 [--models a,b,c] [--resume] [--markdown] ...

Commands are the six study phases plus band-subset runs, synthetic data
generation, and dataset validation. Flags override the matching config
fields. Exit codes: 0 success, 2 configuration problems, 3 data or
numerical-domain problems, 4 unexpected internal errors.
"""
from __future__ import annotations

import argparse
import sys
import traceback

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigError, SpectraBenchError
from .report import write_report, write_timings
from .runner import PHASES

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_COMMAND_HELP = {
    "phase1": "defaults baseline for every model on the original split",
    "phase2": "balancing x PCA x model factorial grid",
    "phase3": "hyperparameter search per model (TPE)",
    "phase4": "k-fold cross-validation and statistics battery",
    "phase5": "ensembles of the top tuned models",
    "phase6": "feature/band importance and ablation study",
    "bands": "reduced band-subset study with recovery vs full spectrum",
    "synth": "generate a synthetic dataset (table + manifest)",
    "validate": "load a dataset and report integrity summaries",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectrabench",
        description="Benchmark runner for spectral ripeness/firmness"
                    " classification studies.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in _COMMAND_HELP.items():
        sp = sub.add_parser(name, help=blurb)
        sp.add_argument("--config", default=None,
                        help="JSON run configuration file")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="global seed override")
        sp.add_argument("--models", default=None,
                        help="comma-separated model names")
        sp.add_argument("--resume", action="store_true",
                        help="reuse cached per-unit results when present")
        sp.add_argument("--markdown", action="store_true",
                        help="also emit a Markdown summary table")
        sp.add_argument("--select-on", choices=("test", "validation"),
                        default=None, dest="select_on",
                        help="phase3 preprocessing selection criterion")
        sp.add_argument("--subset", default=None,
                        help="band subset: preset name or i,j,k indices")
        sp.add_argument("--n-trials", type=int, default=None,
                        dest="n_trials", help="search trials per model")
        sp.add_argument("--cv-k", type=int, default=None, dest="cv_k",
                        help="cross-validation fold count")
    return parser


def _parse_subset(raw: str | None):
    if raw is None:
        return None
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError("--subset must not be empty")
    if all(p.lstrip("-").isdigit() for p in parts):
        return tuple(int(p) for p in parts)
    if len(parts) == 1:
        return parts[0]
    raise ConfigError(f"--subset must be a preset name or integers,"
                      f" got {raw!r}")


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    models = None
    if args.models is not None:
        models = tuple(m.strip() for m in args.models.split(",") if m.strip())
        if not models:
            raise ConfigError("--models must name at least one model")
    return cfg.override(
        out_dir=args.out,
        seed=args.seed,
        models=models,
        select_on=args.select_on,
        subset=_parse_subset(args.subset),
        n_trials=args.n_trials,
        cv_k=args.cv_k,
        markdown=True if args.markdown else None,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = _apply_overrides(cfg, args)
        result = PHASES[args.command](cfg, resume=args.resume)
        paths = write_report(cfg.out_dir, result.name, result.report,
                             result.columns, markdown=cfg.markdown)
        if result.timings:
            write_timings(cfg.out_dir, result.name, result.timings)
        n = len(result.report.get("rows", []))
        print(f"{result.name}: {n} row(s) -> {paths['json']}")
        for w in result.report.get("meta", {}).get("warnings", []):
            print(f"warning: {w}")
        return EXIT_OK
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SpectraBenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        print("internal error:", file=sys.stderr)
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
