"""Command line entry point: ``qmhlab CONFIG [--mode M] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .config import MODES, load_config
from .errors import ConfigError, QmhlabError
from .runner import EXIT_CONFIG, run


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmhlab", description="Run a configured Metropolis-Hastings experiment.")
    p.add_argument("config", help="path to a JSON experiment config")
    p.add_argument("--mode", choices=MODES, help="override the config's mode")
    p.add_argument("--seed", type=int, help="override the config's seed")
    p.add_argument("--out", help="output directory (default: config output_dir or qmhlab_out/<mode>)")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.add_argument("--version", action="version", version=f"qmhlab {__version__}")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.mode, args.seed, args.out)
        code, summary = run(cfg, plots=False if args.no_plots else None)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QmhlabError as exc:
        # invalid model parameters surface here, also a config problem
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"mode": cfg.mode, "config_hash": cfg.config_hash, "exit": code}, sort_keys=True))
    if code:
        print("verification failed", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
