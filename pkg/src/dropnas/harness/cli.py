"""Command-line entry point: ``dropnas <command> --config run.json``.

Exit codes: 0 ok, 1 other failure, 2 I/O error, 3 checkpoint/config hash
mismatch, 4 search space larger than the enumeration cap.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import ConfigError, DropNasError, FormatError
from . import pipeline
from .checkpoint import HashMismatch
from .config import load_config

EXIT_OK, EXIT_FAIL, EXIT_IO, EXIT_HASH, EXIT_CAP = 0, 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dropnas", description="Hardware-aware neural dropout search")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help, artifacts=False):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True)
        p.add_argument("--out-dir", help="override paths.output_dir from the config")
        if artifacts:
            p.add_argument("--checkpoint", help="default: <out-dir>/checkpoint.json")
            p.add_argument("--gp", help="default: <out-dir>/gp_model.json")
        return p

    add("train", "train the weight-sharing supernet")
    add("latency-fit", "build the latency dataset and fit the GP surrogate")
    add("search", "evolutionary search over dropout configurations", artifacts=True)
    add("enumerate", "evaluate every configuration and emit the reference Pareto front", artifacts=True)
    ev = add("eval", "evaluate one configuration given in letter code", artifacts=True)
    ev.add_argument("--genome", required=True, help="letter code such as B-B-M")
    ev.add_argument("--quantized", action="store_true", help="evaluate in Q7.8 fixed point")
    return ap


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.out_dir)
        if args.command == "train":
            result = pipeline.cmd_train(cfg)
        elif args.command == "latency-fit":
            result = pipeline.cmd_latency_fit(cfg)
        elif args.command == "search":
            result = pipeline.cmd_search(cfg, args.checkpoint, args.gp)
        elif args.command == "enumerate":
            result = pipeline.cmd_enumerate(cfg, args.checkpoint, args.gp)
        else:
            result = pipeline.cmd_eval(cfg, args.genome, args.checkpoint, args.gp, args.quantized)
    except HashMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HASH
    except pipeline.SpaceTooLarge as exc:
        print(f"error: {exc} (space size {exc.size})", file=sys.stderr)
        return EXIT_CAP
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DropNasError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps(result, indent=2, default=str))
    return EXIT_OK


def main() -> None:
    sys.exit(run())
