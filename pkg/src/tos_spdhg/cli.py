"""Command line front end.

::

    tos solve CONFIG [--out-dir DIR] [--threads N] [--override-unsafe-steps]
    tos validate-steps CONFIG
    tos phantom CONFIG [--out-dir DIR]
    tos reference CONFIG [--out-dir DIR]

``TOS_SEED`` in the environment replaces ``problem.seed``.

Exit codes: 0 success, 1 I/O error, 2 config error, 3 step sizes not
certified, 4 non-finite iterate.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import experiment
from .config import ConfigError, load_config
from .sampling import StepSizeError, validate_step_sizes
from .solvers import DivergenceError

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_STEPS, EXIT_NAN = 0, 1, 2, 3, 4

log = logging.getLogger("tos_spdhg")


def _load(args):
    cfg = load_config(args.config)
    env = os.environ.get("TOS_SEED")
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"TOS_SEED must be an integer, got {env!r}") from None
        cfg.problem = dataclasses.replace(cfg.problem, seed=seed)
    if getattr(args, "out_dir", None):
        cfg.output = dataclasses.replace(cfg.output, directory=args.out_dir)
    return cfg


def cmd_solve(args) -> int:
    cfg = _load(args)
    experiment.run_experiment(cfg, cfg.output.directory, threads=args.threads,
                              override_unsafe=args.override_unsafe_steps)
    print(f"wrote results to {cfg.output.directory}")
    return EXIT_OK


def cmd_validate_steps(args) -> int:
    cfg = _load(args)
    bundle = experiment.build_bundle(cfg)
    ok = True
    for algo in cfg.solver.algorithms:
        if algo in experiment.STOCHASTIC:
            steps = experiment.stochastic_steps(cfg, bundle, strict=False)
            probs = experiment.make_sampler(cfg, bundle, 0).probs
            good, report = validate_step_sizes(steps, probs)
            print(f"{algo}: tau = {steps.tau:.8g}, theta = {steps.theta:g}, "
                  f"L = {steps.lipschitz:.8g}")
            print(report.format_table())
        else:
            tau, sigma, margin = experiment.condat_vu_step_report(cfg, bundle)
            good = margin >= 0
            print(f"{algo}: tau = {tau:.8g}, sigma = {sigma:.8g}, "
                  f"1/tau - sigma*||A||^2 - L/2 = {margin:.8g}")
        print(f"{algo}: {'certified' if good else 'NOT certified'}")
        ok = ok and good
    return EXIT_OK if ok else EXIT_STEPS


def cmd_phantom(args) -> int:
    cfg = _load(args)
    if cfg.problem.modality not in ("sparse-view", "low-dose"):
        raise ConfigError(f"phantom needs a CT modality, got {cfg.problem.modality!r}")
    out = Path(cfg.output.directory)
    bundle = experiment.build_bundle(cfg)
    experiment.write_data(out, bundle)
    print(f"wrote phantom and sinogram to {out}")
    return EXIT_OK


def cmd_reference(args) -> int:
    cfg = _load(args)
    if cfg.reference.iters < 1:
        raise ConfigError("reference.iters must be >= 1 to compute a reference")
    out = Path(cfg.output.directory)
    bundle = experiment.build_bundle(cfg, data_dir=out)
    ref = experiment.ensure_reference(cfg, bundle, out, recompute=True)
    print(f"reference: {ref.iterations} iterations, movement {ref.movement:.3g}, "
          f"certified={ref.certified}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tos", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run every (algorithm, seed) pair")
    p.add_argument("config")
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--override-unsafe-steps", action="store_true",
                   help="run even if step sizes cannot be certified")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("validate-steps", help="print the ESO table")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate_steps)

    p = sub.add_parser("phantom", help="write phantom and sinogram files")
    p.add_argument("config")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("reference", help="compute the reference saddle point")
    p.add_argument("config")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_reference)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepSizeError as exc:
        print(f"step sizes not certified: {exc}", file=sys.stderr)
        return EXIT_STEPS
    except DivergenceError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NAN
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
