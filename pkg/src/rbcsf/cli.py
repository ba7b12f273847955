"""Command-line entry point.

Exit status: 0 success, 1 configuration error, 2 runtime error, 3 failed
solver verification.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .environment import ConfigError
from .harness import (
    ExperimentConfig,
    ensure_writable,
    load_config,
    output_root,
    regret_report,
    run_dir,
    run_experiment,
    sweep,
    verify_solver,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3

log = logging.getLogger("rbcsf")


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else ExperimentConfig()


def cmd_run(args) -> int:
    config = _config(args)
    strategy = config.strategy(args.strategy)
    seed = config.seeds[0] if args.seed is None else args.seed
    out = ensure_writable(output_root(config))
    result = run_experiment(config, strategy, seed, out, horizon=args.horizon)
    s = result.summary
    print(
        f"{s.strategy} seed={s.seed} T={s.horizon} cumulative_time={s.cumulative_time:.3f} "
        f"max_z={s.max_z:.3f} min_rate={s.min_rate:.4f} -> {run_dir(out, s.strategy, s.seed)}"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _config(args)
    out = ensure_writable(output_root(config))
    results = sweep(config, out, jobs=args.jobs)
    for r in results:
        s = r.summary
        log.info("%s seed=%d cumulative_time=%.3f max_z=%.3f", s.strategy, s.seed, s.cumulative_time, s.max_z)
    print(f"{len(results)} runs -> {out / 'comparison.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify_solver(args.trials, args.seed)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_regret(args) -> int:
    config = _config(args)
    out = ensure_writable(output_root(config))
    report = regret_report(config, out)
    for name, entry in report["strategies"].items():
        for t, value in entry["median"].items():
            print(f"{name} T={t} median_regret={value:.4f} bound={entry['bound'][t]:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbcsf", description="Fairness-aware client selection simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one strategy on one seed")
    p.add_argument("--config")
    p.add_argument("--strategy", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int, help="override the config horizon")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="every strategy x every seed")
    p.add_argument("--config")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-solver", help="compare the solver against brute force")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("regret", help="regret of each rbcsf strategy against the clairvoyant policy")
    p.add_argument("--config")
    p.set_defaults(func=cmd_regret)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
