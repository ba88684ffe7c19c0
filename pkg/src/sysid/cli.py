"""``sysid`` command line.

    sysid simulate|prepare|identify|nls|noise-sweep|adaptation --config FILE
          [--seed S] [--eta X] [--iters N] [--jobs N] [--out DIR] [--svg]

The seed falls back to ``$SYSID_SEED`` and then to the config file. Exit
codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import bench
from .config import load_config
from .errors import ConfigError, DataError, DomainError, NumericalError, SysIdError

COMMANDS = ("simulate", "prepare", "identify", "nls", "noise-sweep", "adaptation")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("sysid")


class _Parser(argparse.ArgumentParser):
    # Usage mistakes are configuration errors, not argparse's default exit 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="sysid", description="On-track tire identification experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="INI experiment file")
    p.add_argument("--seed", type=int, help="seed (default: $SYSID_SEED, then the config)")
    p.add_argument("--eta", type=float, help="noise multiplier for simulated training data; "
                                             "for noise-sweep, a single grid value")
    p.add_argument("--iters", type=int, help="identification iterations")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--svg", action="store_true", help="also write SVG charts (needs matplotlib)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_seed(cli_seed, config_seed):
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("SYSID_SEED", "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SYSID_SEED={env!r} is not an integer") from None
    return config_seed


def run(args) -> dict:
    cfg = load_config(args.config)
    cfg = cfg.with_seed(resolve_seed(args.seed, cfg.seed))
    if args.iters is not None:
        if args.iters < 1:
            raise ConfigError("--iters must be >= 1")
        cfg = cfg.with_iters(args.iters)
    if args.eta is not None:
        if args.eta < 0:
            raise ConfigError("--eta must be >= 0")
        if args.command != "noise-sweep":
            cfg = cfg.with_eta(args.eta)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")

    if args.command == "simulate":
        return bench.run_simulate(cfg, args.out)
    if args.command == "prepare":
        return bench.run_prepare(cfg, args.out)
    if args.command == "identify":
        return bench.run_identify(cfg, args.out, svg=args.svg)
    if args.command == "nls":
        return bench.run_nls(cfg, args.out)
    if args.command == "noise-sweep":
        etas = (args.eta,) if args.eta is not None else None
        return bench.run_noise_sweep(cfg, args.out, jobs=args.jobs, etas=etas, svg=args.svg)
    return bench.run_adaptation(cfg, args.out, n_iter=args.iters or 2)


def _summary(report) -> str:
    cmd = report["command"]
    if cmd == "simulate":
        return f"wrote {report['files']['train']} and {report['files']['test']}"
    if cmd == "prepare":
        return f"wrote {report['rows']['pairs']} training pairs to training_set.csv"
    if cmd in ("identify", "nls"):
        r = report.get("rmse_final")
        tail = f", one-step RMSE v_y {r['v_y']:.5f} omega {r['omega']:.5f}" if r else ""
        flag = " (diverged, best-so-far kept)" if report.get("identification", {}).get("diverged") else ""
        return f"{cmd} done{flag}{tail}"
    if cmd == "noise-sweep":
        ratios = ", ".join(f"{k}: {v:.2f}" for k, v in report["ratio_nls_over_ours"].items())
        return f"sweep done, NLS/ours ratio by eta: {ratios}"
    b, a = report["rmse_before"], report["rmse_after"]
    return (f"adaptation: v_y {b['v_y']:.5f} -> {a['v_y']:.5f}, "
            f"omega {b['omega']:.5f} -> {a['omega']:.5f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SysIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(_summary(report))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
