"""Command-line interface.

Subcommands: ``run`` (one experiment), ``compare`` (exact vs estimated
variants), ``oracle`` (precompute and store a reference solution).
Exit codes: 0 success, 2 non-convergence, 3 configuration error.  Set
``PROXEST_LOG`` (DEBUG/INFO/WARNING/ERROR) to control log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .harness import ConfigError, compare_modes, compute_oracle, load_config, run_experiment

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3

log = logging.getLogger("proxest")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="proxest",
        description="Distributed ADMM with coordinator-side prox estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True, help="path to the JSON config")
    run.add_argument("--mode", choices=["exact", "estimated"], help="override config mode")
    run.add_argument("--memory", type=int, help="override the memory limit")
    run.add_argument("--out", help="directory for metrics.csv and summary.json")

    cmp_ = sub.add_parser("compare", help="compare exact and estimated modes")
    cmp_.add_argument("--config", required=True, help="path to the JSON config")
    cmp_.add_argument("--out", help="directory for comparison.csv and comparison.json")

    oracle = sub.add_parser("oracle", help="precompute the reference solution")
    oracle.add_argument("--config", required=True, help="path to the JSON config")
    oracle.add_argument("--out", required=True, help="output JSON file")
    return parser


def _cmd_run(args):
    config = load_config(args.config)
    if args.mode is not None:
        config = replace(config, mode=args.mode)
    if args.memory is not None:
        if args.memory < 1:
            raise ConfigError("--memory must be a positive integer")
        config = replace(config, memory_limit=args.memory)
    out_dir = args.out or config.output_path
    metrics = run_experiment(config)
    log.info(
        "run finished: mode=%s iterations=%d comms=%d converged=%s",
        config.mode,
        metrics.summary["iterations"],
        metrics.summary["communication_rounds"],
        metrics.summary["converged"],
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics.write_csv(os.path.join(out_dir, "metrics.csv"))
        metrics.write_summary(os.path.join(out_dir, "summary.json"))
    if not metrics.summary["converged"]:
        print(
            f"did not converge within {config.max_iter} iterations "
            f"(final rel err {metrics.summary['final_rel_error']:.3e})",
            file=sys.stderr,
        )
        return EXIT_NOT_CONVERGED
    print(
        f"converged in {metrics.summary['iterations']} iterations, "
        f"{metrics.summary['communication_rounds']} communication rounds per agent"
    )
    return EXIT_OK


def _cmd_compare(args):
    config = load_config(args.config)
    report = compare_modes(config)
    print(report.to_text())
    if args.out:
        report.write(args.out)
    return EXIT_OK


def _cmd_oracle(args):
    config = load_config(args.config)
    result = compute_oracle(config)
    payload = {
        "scenario": {"N": config.n_agents, "T": config.horizon, "seed": config.seed},
        "rho": config.rho,
        "iterations": result.iterations,
        "final_residual": result.final_residual,
        "y": result.y.tolist(),
    }
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"oracle written to {args.out} ({result.iterations} iterations)")
    return EXIT_OK


def main(argv=None):
    logging.basicConfig(level=os.environ.get("PROXEST_LOG", "WARNING").upper())
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "compare": _cmd_compare, "oracle": _cmd_oracle}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
