"""Command-line entry point: ``urbanflow <subcommand> --config pipeline.toml``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .pipeline import MissingArtifact, NonConvergence, Pipeline

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3

_STD_ATTRS = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message"}


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        entry = {"level": record.levelname.lower(), "logger": record.name,
                 "msg": record.getMessage()}
        for k, v in vars(record).items():
            if k not in _STD_ATTRS:
                entry[k] = v
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


def _setup_logging(verbose):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline TOML file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="urbanflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "visits", "homes", "mixing", "report"):
        sub.add_parser(name, parents=[common])
    g = sub.add_parser("gravity", parents=[common])
    g.add_argument("action", choices=["fit"])
    g.add_argument("--attraction", action="store_true",
                   help="add the mall attraction term")
    c = sub.add_parser("covisit", parents=[common])
    c.add_argument("action", choices=["fit", "cluster", "network"])
    s = sub.add_parser("synth", parents=[common])
    s.add_argument("action", choices=["city", "traces"])
    return parser


def run(args):
    cfg = load_config(args.config, seed=args.seed, out=args.out)
    pipe = Pipeline(cfg)
    cmd = args.command
    if cmd == "synth":
        return pipe.synth_city() if args.action == "city" else pipe.synth_traces()
    if cmd == "gravity":
        return pipe.gravity_fit(attraction=args.attraction)
    if cmd == "covisit":
        return getattr(pipe, f"covisit_{args.action}")()
    return getattr(pipe, cmd)()


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    log = logging.getLogger("urbanflow")
    try:
        run(args)
    except MissingArtifact as exc:
        log.error(str(exc), extra={"required_stage": exc.stage})
        return EXIT_INVALID
    except NonConvergence as exc:
        log.error(str(exc))
        return EXIT_NONCONVERGED
    except (ConfigError, ValueError, OSError) as exc:
        log.error(str(exc), extra={"error": type(exc).__name__})
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
