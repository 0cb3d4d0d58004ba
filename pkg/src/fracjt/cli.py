"""Command-line interface: solve, adp, baseline, and sweep subcommands."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import dp
from .harness import (
    ConfigError,
    ExperimentConfig,
    _parse_float_list,
    parse_config,
    run_cell,
    run_experiment,
    write_csv,
)

TRACE_HEADER = "frame,k,alpha,p_tilde,p1,p2,B1,B2\n"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--out", help="CSV output path override")
    p.add_argument("--seed", help="comma-separated experiment seeds")
    p.add_argument("--frames", type=int, help="evaluation horizon override")
    p.add_argument("--e2-sweep", dest="e2_sweep",
                   help="comma list or start:stop:count of BS2 arrival rates (W)")


def _add_single_point(p: argparse.ArgumentParser) -> None:
    _add_common(p)
    p.add_argument("--e2", type=float, help="BS2 arrival rate (W); default: first sweep value")
    p.add_argument("--trace", help="write a per-frame trace file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracjt",
        description="Fractional joint-transmission simulator for two "
                    "energy-harvesting base stations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact DP on one energy-rate point")
    _add_single_point(p)
    p.add_argument("--policy-out", help="write the converged (h, lambda, policy) table")

    p = sub.add_parser("adp", help="approximate DP on one energy-rate point")
    _add_single_point(p)

    p = sub.add_parser("baseline", help="run a baseline policy on one point")
    _add_single_point(p)
    p.add_argument("--kind", required=True,
                   choices=("conventional_zfjt", "greedy", "fixed_bs"))
    p.add_argument("--bs", type=int, choices=(1, 2),
                   help="fixed single-BS choice for --kind fixed_bs")

    p = sub.add_parser("sweep", help="full algorithm x E2 x seed sweep to CSV")
    _add_common(p)
    p.add_argument("--algo", help="comma-separated algorithm list override")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.out_path = args.out
    if args.seed:
        cfg.seeds = tuple(int(tok) for tok in args.seed.split(",") if tok.strip())
    if args.frames:
        cfg.n_frames = args.frames
    if args.e2_sweep:
        try:
            cfg.e2_sweep = _parse_float_list(args.e2_sweep)
        except ValueError as exc:
            raise ConfigError(f"--e2-sweep: {exc}") from exc
    if getattr(args, "algo", None):
        cfg.algorithms = tuple(tok.strip() for tok in args.algo.split(",") if tok.strip())
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    cfg.validate()
    return cfg


def _single_point(cfg: ExperimentConfig, args, algorithm: str) -> int:
    e2 = args.e2 if args.e2 is not None else cfg.e2_sweep[0]
    cfg.e2_sweep = (float(e2),)
    records = []
    for seed in cfg.seeds:
        trace = None
        if args.trace:
            trace = open(args.trace, "w")
            trace.write(TRACE_HEADER)
        try:
            rec = run_cell(cfg, algorithm, 0, seed, trace_writer=trace)
        finally:
            if trace is not None:
                trace.close()
        records.append(rec)
        print(
            f"{rec.algorithm} E1={rec.e1_w:.6g}W E2={rec.e2_w:.6g}W seed={rec.seed}: "
            f"avg sum-rate {rec.avg_sum_rate:.6g} bps/Hz, avg alpha {rec.avg_alpha:.6g}"
        )
    if args.out or cfg.out_path:
        write_csv(records, args.out or cfg.out_path)
    return 0


def _cmd_solve(args) -> int:
    cfg = _load_config(args)
    code = _single_point(cfg, args, "dp")
    if args.policy_out:
        from .harness import build_grids

        seed = cfg.seeds[0]
        grid, e_rates = build_grids(cfg, cfg.e2_sweep[0], seed)
        tables = dp.build_stage_tables(grid, e_rates, cfg.delta_alpha)
        util, policy = dp.relative_value_iteration(
            grid, e_rates, tau=cfg.tau, tol=cfg.vi_tol, tables=tables,
            delta_alpha=cfg.delta_alpha,
        )
        dp.save_dp_table(args.policy_out, grid, util, policy, e_rates)
        print(f"lambda* = {util.lam:.6g} bps/Hz; table written to {args.policy_out}")
    return code


def _cmd_adp(args) -> int:
    cfg = _load_config(args)
    return _single_point(cfg, args, "adp")


def _cmd_baseline(args) -> int:
    cfg = _load_config(args)
    if args.kind == "fixed_bs":
        if args.bs is None:
            raise ConfigError("--kind fixed_bs requires --bs 1|2")
        cfg.fixed_bs_k = str(args.bs)
    return _single_point(cfg, args, args.kind)


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    records = run_experiment(cfg)
    write_csv(records, cfg.out_path)
    print(f"{len(records)} records written to {cfg.out_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "solve": _cmd_solve,
        "adp": _cmd_adp,
        "baseline": _cmd_baseline,
        "sweep": _cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
