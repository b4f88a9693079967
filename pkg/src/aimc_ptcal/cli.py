"""Command line front-end: ``aimc-ptcal <experiment> [flags]``.

Exit codes: 0 success, 2 configuration or usage error, 3 manifest parse
error, 4 I/O error, 1 anything else raised by the library.  Failures print
one line ``error[<category>]: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .errors import AnalogError
from .experiments import EXPERIMENTS, default_config, load_config, run_experiment, write_artifact

EXIT_CODES = {"config": 2, "parse": 3, "io": 4}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aimc-ptcal",
                                     description="Analog crossbar simulation and range calibration experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    helps = {
        "mvm-error": "L2 error of one programmed tile versus time",
        "map-report": "tile count and utilization of a layer manifest",
        "calibrate": "train the toy model and report its calibrated ranges",
        "train-demo": "hardware-aware training metrics on the toy model",
        "ablation": "accuracy over learned/post-training range configurations",
    }
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="JSON config document (see README)")
        p.add_argument("--seed", type=int, help="root seed, unsigned 64-bit")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for repetitions")
        p.add_argument("--out", help="artifact path (default: stdout)")
        p.add_argument("--repetitions", type=int, help="number of seeds")
        if name == "map-report":
            p.add_argument("--manifest", help="layer manifest CSV (default: bundled RoBERTa-base shapes)")
    return parser


def _config(args):
    cfg = load_config(args.config, args.experiment) if args.config else default_config(args.experiment)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.repetitions is not None:
        changes["repetitions"] = args.repetitions
    if args.out is not None:
        changes["output_path"] = args.out
    if getattr(args, "manifest", None) is not None:
        changes["manifest"] = args.manifest
    return cfg.replace(**changes) if changes else cfg


def _fail(category: str, message: str) -> int:
    print(f"error[{category}]: {message}", file=sys.stderr)
    return EXIT_CODES.get(category, 1)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        return _fail("config", "--jobs must be >= 1")
    try:
        cfg = _config(args)
        text = run_experiment(cfg, jobs=args.jobs)
        if cfg.output_path:
            write_artifact(text, cfg.output_path)
        else:
            sys.stdout.write(text)
    except AnalogError as exc:
        return _fail(exc.category, str(exc))
    except OSError as exc:
        return _fail("io", f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(": "))
    return 0


if __name__ == "__main__":
    sys.exit(main())
