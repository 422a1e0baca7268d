"""Command-line entry point: ``cachecast <subcommand> ...``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys

import numpy as np

from .config import ConfigError, load_config
from .experiment import SEED_ENV, SweepSpec, default_seed, emit_outputs, run_sweep
from .lcu import lcu_expected_distortion
from .multicast.delivery import demand_hash, simulate_delivery
from .multicast.packets import packetize
from .optimizer import (
    OptimizerConfig,
    load_solution,
    optimize_general,
    optimize_rlfu,
    optimize_symmetric,
    optimize_uniform,
    save_solution,
)
from .source_model import sample_demand
from .validation import validate


def _num(x) -> str:
    return format(float(x), ".17g")


def _writer(out):
    return csv.writer(out, lineterminator="\n")


def _open_out(path):
    return contextlib.nullcontext(sys.stdout) if path in (None, "-") else open(path, "w", newline="")


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV, "").strip():
        seed = default_seed()
    spec = SweepSpec.from_config(cfg, seed=seed)
    table = run_sweep(spec)
    for p in emit_outputs(table, args.out, args.format):
        print(p)
    return 0


def cmd_lcu(args) -> int:
    cfg = load_config(args.config)
    e = lcu_expected_distortion(cfg.library, cfg.demand, cfg.budgets, args.capacity, mode=args.mode)
    with _open_out(args.out) as fh:
        w = _writer(fh)
        w.writerow(["R", "M", "expected_distortion", "stderr"])
        w.writerow([_num(args.capacity), _num(cfg.budgets.mean()), _num(e.value), _num(e.stderr)])
    return 0


def _solve(cfg, args):
    opt = OptimizerConfig(restarts=args.restarts, seed=args.seed, unicast_mode=args.unicast_mode)
    q = cfg.demand.q
    if args.scheme == "general":
        return optimize_general(cfg.library, cfg.demand, cfg.budgets, args.capacity, opt)
    if not cfg.demand.is_symmetric() or np.ptp(cfg.budgets) > 0:
        raise ConfigError(f"scheme {args.scheme} needs identical request rows and cache sizes")
    M = float(cfg.budgets[0])
    if args.scheme == "symmetric":
        return optimize_symmetric(cfg.library, q[0], M, args.capacity, cfg.n, opt)
    if args.scheme == "rlfu":
        return optimize_rlfu(cfg.library, q[0], M, args.capacity, cfg.n, opt)
    if np.ptp(q[0]) > 1e-12 or np.ptp(cfg.library.variances) > 0:
        raise ConfigError("scheme uniform needs uniform popularity and one common variance")
    return optimize_uniform(float(cfg.library.variances[0]), M, args.capacity, cfg.n, m=cfg.m, cfg=opt)


def cmd_ccm(args) -> int:
    cfg = load_config(args.config)
    sol = _solve(cfg, args)
    if args.solution:
        save_solution(sol, args.solution)
    with _open_out(args.out) as fh:
        w = _writer(fh)
        w.writerow(["scheme", "R", "M", "m_tilde", "objective", "feasible"])
        mt = "" if sol.m_tilde is None else sol.m_tilde
        w.writerow([sol.scheme, _num(args.capacity), _num(cfg.budgets.mean()), mt, _num(sol.objective), sol.feasible])
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.solution:
        sol = load_solution(args.solution)
    else:
        args.scheme = "general" if cfg.n * cfg.m <= 16 else "rlfu"
        args.unicast_mode = "per-file"
        sol = _solve(cfg, args)
    plan = sol.plan
    if plan.n != cfg.n or plan.m != cfg.m:
        raise ConfigError("solution file does not match the config dimensions")
    rng = np.random.default_rng(args.seed)
    with _open_out(args.out) as fh:
        w = _writer(fh)
        w.writerow(["trial", "demand_hash", "coded_rate", "naive_rate", "unicast_rate", "mean_distortion"])
        for t in range(args.trials):
            d = sample_demand(cfg.demand, rng)
            placement = packetize(plan, args.packets, rng=rng)
            res = simulate_delivery(placement, plan, d, args.capacity, cfg.library.variances)
            w.writerow(
                [t, demand_hash(d), _num(res.coded_rate), _num(res.naive_rate), _num(res.unicast_rate), _num(res.mean_distortion)]
            )
    return 0


def cmd_validate(args) -> int:
    results = validate(args.level, args.report)
    for r in results:
        print(r.line(), flush=True)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    p = argparse.ArgumentParser(
        prog="cachecast",
        description="Distortion-memory tradeoffs of cache-aided video delivery over a shared link.",
        epilog=f"The default seed is 0 unless the {SEED_ENV} environment variable is set.",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="distortion vs cache size for several schemes and capacities")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--format", choices=("csv", "plotdata"), default="csv")
    s.add_argument("--seed", type=int, default=None, help=f"overrides {SEED_ENV} and the config's sweep seed")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("lcu", help="expected distortion of local caching with unicast")
    s.add_argument("--config", required=True)
    s.add_argument("--capacity", type=float, required=True)
    s.add_argument("--mode", default="exact", help="exact or mc:<samples>:<seed>")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_lcu)

    for name, helptext in (("ccm", "design coded-multicast rates"), ("simulate", "packet-level delivery of a design")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--capacity", type=float, required=True)
        s.add_argument("--seed", type=int, default=seed)
        s.add_argument("--restarts", type=int, default=8)
        s.add_argument("--out", default="-")
        if name == "ccm":
            s.add_argument("--scheme", choices=("general", "symmetric", "rlfu", "uniform"), default="rlfu")
            s.add_argument("--unicast-mode", choices=("per-file", "per-demand"), default="per-file")
            s.add_argument("--solution", help="write the full plan here (JSON)")
            s.set_defaults(func=cmd_ccm)
        else:
            s.add_argument("--solution", help="plan written by `ccm --solution`; solved afresh if omitted")
            s.add_argument("--packets", type=int, default=100, help="packets per layer B")
            s.add_argument("--trials", type=int, default=100)
            s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("validate", help="run the acceptance checks")
    s.add_argument("--level", choices=("quick", "full"), default="quick")
    s.add_argument("--report", help="write a JSON report here")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"cachecast: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
