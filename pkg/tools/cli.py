#!/usr/bin/env python3
"""
cli.py
------
Command-line entry point of the stability lab.

USAGE:
    bsde-lab constants --beta 300 --phi 0
    bsde-lab constants --beta 300 --phi-seq 0.5 0.1 0.01
    bsde-lab solve --problem linear-lambda --lam 0.5 --deterministic --k 100 --out results/
    bsde-lab solve --data instance.json --p-max 12 --out results/
    bsde-lab experiment --config config/experiment.yaml --out results/
    bsde-lab metrics j1 a.txt b.txt --window 1.0
    bsde-lab metrics ks mu.txt nu.txt
    bsde-lab mo-check results/convergence_picard_gap.csv --variant A --tol 0.05

Exit codes: 0 PASS, 2 FAIL verdict, 1 usage, I/O or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .config import configure_logging, load_config
from .constants import certify, pi_star, pi_tilde_star, select_k_star
from .drivers import StandardData, make_generator, validate_conditions
from .errors import LabError
from .harness import emit_report, load_table_csv, stability_experiment
from .limits import moore_osgood_a, moore_osgood_b
from .measures import FiniteMeasure, interval_sup_distance, ks_distance
from .paths import StepPath, j1_distance, sup_distance
from .references import reference_problem
from .solver import norms_json, solution_table, solve, star_norm

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_FAIL = 2


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise SystemExit(f"File not found: {p}")
    return p.read_text(encoding="utf-8")


def _print_json(payload: Dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# --- commands ------------------------------------------------------------------------


def cmd_constants(args: argparse.Namespace) -> int:
    payload: Dict = {}
    if args.gamma is not None and args.delta is not None:
        payload["pi_star"] = pi_star(args.gamma, args.delta, args.phi)
    if args.delta is not None:
        payload["pi_tilde_star"] = pi_tilde_star(args.delta, args.phi)
    if args.phi_seq:
        selection = select_k_star(args.phi_seq, args.beta)
        payload["k_star"] = selection.to_dict()
        _print_json(payload)
        return EXIT_PASS if selection.tail_verified else EXIT_FAIL
    cert = certify(args.beta, args.phi, cross_check=not args.no_cross_check)
    payload["certificate"] = cert.to_dict()
    _print_json(payload)
    return EXIT_PASS if cert.passes_quarter else EXIT_FAIL


def _load_data(args: argparse.Namespace) -> StandardData:
    if args.data:
        return StandardData.from_json(_read_text(args.data))
    problem = reference_problem(
        args.problem,
        lam=args.lam,
        payoff=args.payoff,
        strike=args.strike,
        xi=args.xi,
        jump_intensity=args.jump_intensity,
        deterministic=args.deterministic,
    )
    data = problem.build_data(args.k)
    if args.generator:
        params = dict(kv.split("=", 1) for kv in args.param)
        gen = make_generator(args.generator, **{k: float(v) for k, v in params.items()})
        data = StandardData(data.tree, data.T, data.dC, data.xi, gen, data.marks, data.nu, data.label)
    return data


def cmd_solve(args: argparse.Namespace) -> int:
    data = _load_data(args)
    report = validate_conditions(data, A_bar=args.a_bar, beta_hat=args.beta)
    cert = None
    if args.beta is not None:
        cert = certify(args.beta, data.Phi)
    res = solve(data, cert, tol=args.tol, max_p=args.p_max, beta=args.beta, convention=args.convention)
    print("\n=== Picard solve ===")
    print(f"Data: {data.label} | steps: {data.n} | leaves: {data.tree.n_leaves}")
    print(f"Y0 = {float(res.solution.Y.root[0]):.12g} | p = {res.solution.p} | converged: {res.converged} | certified: {res.certified}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        table_path = out / "solution.csv"
        solution_table(res.solution, data).to_csv(table_path, index=False, float_format="%.17g")
        (out / "norms.json").write_text(norms_json(star_norm(res.solution, data, res.beta, normalized=True)) + "\n")
        summary = {"solve": res.to_dict(), "conditions": report.to_dict()}
        if cert is not None:
            summary["certificate"] = cert.to_dict()
        (out / "solve.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        print(f"Outputs written: {out.resolve()}")
    return EXIT_PASS if res.converged else EXIT_FAIL


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    updates = {}
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.seed is not None:
        updates["seed"] = args.seed
    experiment = cfg.experiment.model_copy(update=updates) if updates else cfg.experiment
    table = stability_experiment(experiment)
    files = emit_report(table, args.out, stem=args.stem)
    print(Path(files[-1]).read_text())
    return EXIT_PASS if table.passed else EXIT_FAIL


def cmd_metrics(args: argparse.Namespace) -> int:
    if args.kind in ("j1", "sup"):
        a = StepPath.from_text(_read_text(args.first))
        b = StepPath.from_text(_read_text(args.second))
        window = args.window if args.window is not None else min(a.T, b.T)
        value = j1_distance(a, b, window) if args.kind == "j1" else sup_distance(a, b, window)
    else:
        mu = FiniteMeasure.from_text(_read_text(args.first))
        nu = FiniteMeasure.from_text(_read_text(args.second))
        if args.kind == "ks":
            value = ks_distance(mu, nu, args.window)
        else:
            if args.window is None:
                raise LabError("interval distance needs --window")
            value = interval_sup_distance(mu, nu, args.window)
    _print_json({"metric": args.kind, "value": float(value), "window": args.window})
    return EXIT_PASS


def cmd_mo_check(args: argparse.Namespace) -> int:
    p = Path(args.table)
    if not p.exists():
        raise SystemExit(f"File not found: {p}")
    table = load_table_csv(p)
    verdict = moore_osgood_a(table, args.tol, uniform_both=args.both) if args.variant == "A" else moore_osgood_b(table, args.tol)
    _print_json(verdict.to_dict())
    return EXIT_PASS if verdict.passed else EXIT_FAIL


# --- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsde-lab", description="Stability lab for BSDEs with jumps")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: config or INFO)")
    parser.add_argument("--log-file", default=None, help="Also log to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("constants", help="Pi*, M* and k* queries")
    c.add_argument("--beta", type=float, required=True, help="beta_hat")
    c.add_argument("--phi", type=float, default=0.0, help="bound on the increments of A")
    c.add_argument("--gamma", type=float, default=None)
    c.add_argument("--delta", type=float, default=None)
    c.add_argument("--phi-seq", type=float, nargs="+", default=None, help="Phi^k sequence for k* selection")
    c.add_argument("--no-cross-check", action="store_true", help="skip the 2-D delta grid check")
    c.set_defaults(func=cmd_constants)

    s = sub.add_parser("solve", help="Picard-solve one instance")
    s.add_argument("--data", default=None, help="StandardData JSON document")
    s.add_argument("--problem", default="martingale-g")
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--lam", type=float, default=0.0)
    s.add_argument("--payoff", default="square")
    s.add_argument("--strike", type=float, default=0.0)
    s.add_argument("--xi", type=float, default=1.0)
    s.add_argument("--jump-intensity", type=float, default=0.0)
    s.add_argument("--deterministic", action="store_true")
    s.add_argument("--generator", default=None, help="replace the problem's generator")
    s.add_argument("--param", action="append", default=[], help="generator parameter name=value")
    s.add_argument("--beta", type=float, default=None)
    s.add_argument("--a-bar", type=float, default=1.0)
    s.add_argument("--p-max", type=int, default=60)
    s.add_argument("--tol", type=float, default=1e-24)
    s.add_argument("--convention", choices=("Y_left", "Y_right"), default="Y_left")
    s.add_argument("--out", default=None, help="directory for solution.csv, norms.json, solve.json")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("experiment", help="run a (k, p) convergence table")
    e.add_argument("--config", required=True)
    e.add_argument("--out", default="results")
    e.add_argument("--stem", default="convergence")
    e.add_argument("--workers", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.set_defaults(func=cmd_experiment)

    m = sub.add_parser("metrics", help="distances between paths or measures stored as text")
    m.add_argument("kind", choices=("j1", "sup", "ks", "interval"))
    m.add_argument("first")
    m.add_argument("second")
    m.add_argument("--window", type=float, default=None)
    m.set_defaults(func=cmd_metrics)

    o = sub.add_parser("mo-check", help="Moore-Osgood verdict on a CSV table")
    o.add_argument("table")
    o.add_argument("--variant", choices=("A", "B"), default="A")
    o.add_argument("--tol", type=float, default=0.05)
    o.add_argument("--both", action="store_true", help="variant A in both index orders")
    o.set_defaults(func=cmd_mo_check)
    return parser


def _log_settings(args: argparse.Namespace):
    level, log_file = args.log_level, args.log_file
    if args.command == "experiment" and Path(args.config).exists() and (level is None or log_file is None):
        try:
            cfg = load_config(args.config)
            level = level or cfg.logging.level
            log_file = log_file or cfg.logging.file
        except LabError:
            pass
    return level or "INFO", log_file


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(*_log_settings(args))
    try:
        return args.func(args)
    except LabError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
