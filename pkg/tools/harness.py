#!/usr/bin/env python3
"""
harness.py
----------
The doubly-indexed (k, p) experiment: one row per driver refinement k, one
column per Picard index p plus the row's fixed point.

Rows with k up to the exact-tree cutoff are solved on the full scenario tree;
beyond it paths are sampled and the discrete iterates come from the closed
forms in ``references``. Every distance compares the k-th discrete solution
with the limit solution evaluated along the same k-th driver paths.

Metrics per cell:

- ``picard_gap``      squared star-norm distance to the row's fixed point
- ``path_j1``         E[(1 ∧ J1)²] for the triple (Y, Z·X∘ + U⋆μ̃, N)
- ``terminal_l2``     E‖terminal gap of the triple‖²
- ``square_brackets`` Σ over square brackets of E‖gap at T‖₁
- ``angle_brackets``  the same for angle brackets
- ``orthogonal_n``    E sup‖N‖²
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .config import ExperimentConfig, LabConfig, parse_config
from .constants import BETA_GRID, certify, default_beta_hat, picard_tail_bound
from .drivers import WalkSample, validate_conditions
from .errors import BracketError, DimensionMismatchError, LabError
from .limits import DoubleTable, MooreOsgoodVerdict, moore_osgood_a, moore_osgood_b
from .paths import j1_distance_batch
from .references import (
    PathBundle,
    PathRecord,
    ReferenceProblem,
    record_from_solution,
    reference_problem,
)
from .solver import ANGLE_BRACKETS, SQUARE_BRACKETS, brackets, gamma_functional, solution_difference, solve, star_norm

logger = logging.getLogger(__name__)

METRICS = ("picard_gap", "path_j1", "terminal_l2", "square_brackets", "angle_brackets", "orthogonal_n")
JUMP_TREE_CUTOFF = 8
_J1_STREAM = 1 << 20


# --- distance estimators ------------------------------------------------------------


@dataclass
class DistanceEstimate:
    """Means with standard errors (zero when the expectation is exact)."""

    path_j1: float
    path_j1_se: float
    terminal_l2: float
    terminal_l2_se: float
    orthogonal_n: float
    brackets: Dict[str, float]
    bracket_se: Dict[str, float]

    @property
    def square_total(self) -> float:
        return float(sum(self.brackets[name] for name in SQUARE_BRACKETS))

    @property
    def angle_total(self) -> float:
        return float(sum(self.brackets[name] for name in ANGLE_BRACKETS))

    def to_dict(self) -> Dict:
        return {
            "path_j1": self.path_j1,
            "path_j1_se": self.path_j1_se,
            "terminal_l2": self.terminal_l2,
            "terminal_l2_se": self.terminal_l2_se,
            "orthogonal_n": self.orthogonal_n,
            "brackets": dict(self.brackets),
            "bracket_se": dict(self.bracket_se),
        }


def _weighted(values: np.ndarray, weights: np.ndarray, exact: bool):
    mean = float((weights * values).sum())
    if exact or values.size < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / np.sqrt(values.size))


def distance_estimators(
    discrete: PathRecord,
    reference: PathRecord,
    bundle: PathBundle,
    window: Optional[float] = None,
    j1_index: Optional[np.ndarray] = None,
    exact: bool = False,
) -> DistanceEstimate:
    """Distances between two solutions read along the same scenarios.

    ``bundle`` supplies the grid and the scenario weights; J1 runs on the
    ``j1_index`` subset (uniform weights), everything else on all scenarios.
    """
    if discrete.Y.shape != reference.Y.shape or discrete.Y.shape[0] != bundle.n_paths:
        raise DimensionMismatchError(
            f"Scenario sets differ: {discrete.Y.shape} vs {reference.Y.shape} on {bundle.n_paths} paths"
        )
    if set(discrete.square) != set(reference.square) or set(discrete.angle) != set(reference.angle):
        raise DimensionMismatchError("Bracket sets differ")
    T = float(bundle.times[-1])
    N = T if window is None else float(window)
    idx = np.arange(bundle.n_paths) if j1_index is None else np.asarray(j1_index)
    A = discrete.triple()[idx]
    B = reference.triple()[idx]
    j1 = j1_distance_batch(bundle.times[1:], A, B, N)
    trunc = np.minimum(1.0, j1) ** 2
    path_j1 = float(trunc.mean())
    path_j1_se = float(trunc.std(ddof=1) / np.sqrt(trunc.size)) if trunc.size > 1 else 0.0
    w = bundle.weights
    term = (
        (discrete.Y[:, -1] - reference.Y[:, -1]) ** 2
        + (discrete.I[:, -1] - reference.I[:, -1]) ** 2
        + (discrete.N[:, -1] - reference.N[:, -1]) ** 2
    )
    terminal_l2, terminal_se = _weighted(term, w, exact)
    orth = float((w * (discrete.N ** 2).max(axis=1)).sum())
    gaps: Dict[str, float] = {}
    ses: Dict[str, float] = {}
    for table_d, table_r in ((discrete.square, reference.square), (discrete.angle, reference.angle)):
        for name in table_d:
            g = np.abs(np.asarray(table_d[name]) - np.asarray(table_r[name])).reshape(bundle.n_paths, -1).sum(axis=1)
            gaps[name], ses[name] = _weighted(g, w, exact)
    return DistanceEstimate(path_j1, path_j1_se, terminal_l2, terminal_se, orth, gaps, ses)


# --- rows -----------------------------------------------------------------------------


@dataclass
class RowResult:
    k: int
    mode: str
    cells: Dict[str, List[float]]
    stderr: Dict[str, List[float]]
    brackets: Dict[str, float]
    y0: float
    y0_limit: float
    gamma_moment: float
    beta: float
    certified: bool
    envelope_ok: Optional[bool]
    conditions_ok: Optional[bool]
    n_paths: int

    @property
    def y0_error(self) -> float:
        return abs(self.y0 - self.y0_limit)

    def to_dict(self) -> Dict:
        return {
            "k": self.k,
            "mode": self.mode,
            "n_paths": self.n_paths,
            "beta": self.beta,
            "certified": self.certified,
            "envelope_ok": self.envelope_ok,
            "conditions_ok": self.conditions_ok,
            "y0": self.y0,
            "y0_limit": self.y0_limit,
            "y0_error": self.y0_error,
            "gamma_moment": self.gamma_moment,
            "brackets": dict(sorted(self.brackets.items())),
            "stderr": {m: list(v) for m, v in sorted(self.stderr.items())},
        }


def _certificate(phi: float, beta_hat: Optional[float]):
    beta = beta_hat if beta_hat is not None else default_beta_hat(phi, BETA_GRID)
    if beta is None:
        return 0.0, None
    try:
        return float(beta), certify(float(beta), phi)
    except BracketError as exc:
        logger.warning("No contraction certificate at beta=%g, phi=%g: %s", beta, phi, exc)
        return float(beta), None


def _use_tree(problem: ReferenceProblem, k: int, cfg: ExperimentConfig) -> bool:
    if problem.deterministic:
        return True
    cutoff = min(cfg.exact_cutoff, JUMP_TREE_CUTOFF) if problem.has_jumps else cfg.exact_cutoff
    if k <= cutoff:
        return True
    if not problem.has_closed_form:
        raise LabError(f"{problem.name} with jumps has no closed-form iterates; k={k} exceeds the exact-tree cutoff {cutoff}")
    return False


def _fill(cells, stderr, est: DistanceEstimate, gap: float) -> None:
    cells["picard_gap"].append(gap)
    stderr["picard_gap"].append(0.0)
    cells["path_j1"].append(est.path_j1)
    stderr["path_j1"].append(est.path_j1_se)
    cells["terminal_l2"].append(est.terminal_l2)
    stderr["terminal_l2"].append(est.terminal_l2_se)
    cells["square_brackets"].append(est.square_total)
    stderr["square_brackets"].append(float(np.sqrt(sum(est.bracket_se[n] ** 2 for n in SQUARE_BRACKETS))))
    cells["angle_brackets"].append(est.angle_total)
    stderr["angle_brackets"].append(float(np.sqrt(sum(est.bracket_se[n] ** 2 for n in ANGLE_BRACKETS))))
    cells["orthogonal_n"].append(est.orthogonal_n)
    stderr["orthogonal_n"].append(0.0)


def _tree_row(problem: ReferenceProblem, k: int, cfg: ExperimentConfig) -> RowResult:
    data = problem.build_data(k)
    beta, cert = _certificate(data.Phi, cfg.beta_hat)
    res = solve(data, cert, max_p=max(60, cfg.p_max), beta=beta, convention=cfg.convention)
    fixed = res.solution
    sigma = 0.0 if problem.deterministic else problem.sigma
    bundle = PathBundle.from_tree(data, sigma)
    limit = problem.limit_record(bundle)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(k, _J1_STREAM)))
    n_sub = min(cfg.j1_paths, bundle.n_paths)
    j1_index = rng.choice(bundle.n_paths, size=n_sub, p=bundle.weights / bundle.weights.sum())
    cells: Dict[str, List[float]] = {m: [] for m in METRICS}
    stderr: Dict[str, List[float]] = {m: [] for m in METRICS}
    iterates = [res.iterates[min(p, len(res.iterates)) - 1] for p in range(1, cfg.p_max + 1)] + [fixed]
    est = None
    for S in iterates:
        record = record_from_solution(S, data, brackets(S, data))
        est = distance_estimators(record, limit, bundle, j1_index=j1_index, exact=True)
        gap = star_norm(solution_difference(S, fixed, data), data, beta, normalized=True).total
        _fill(cells, stderr, est, gap)
    envelope_ok = bool(all(
        cells["picard_gap"][p - 1] <= picard_tail_bound(res.first_norm, p) * (1 + 1e-9) + 1e-300
        for p in range(1, cfg.p_max + 1)
    )) if res.certified else None
    conditions = validate_conditions(data, cfg.A_bar, beta if beta > 0 else None, ui_delta=cfg.ui_delta)
    ui = gamma_functional(data, fixed, cfg.convention, cfg.ui_delta)
    return RowResult(
        k=k,
        mode="tree",
        cells=cells,
        stderr=stderr,
        brackets=dict(est.brackets),
        y0=float(fixed.Y.root[0]),
        y0_limit=float(problem.limit_y(0.0, np.zeros(1), np.zeros(1))[0]),
        gamma_moment=ui.moment,
        beta=beta,
        certified=res.certified,
        envelope_ok=envelope_ok,
        conditions_ok=conditions.passed,
        n_paths=bundle.n_paths,
    )


def sample_paths(problem: ReferenceProblem, k: int, n_paths: int, seed: int, block_size: int) -> PathBundle:
    """Sampled k-step driver paths; block b always draws from stream (seed, k, b)."""
    driver = problem.driver(k)
    parts = []
    done, block = 0, 0
    while done < n_paths:
        size = min(block_size, n_paths - done)
        parts.append(driver.sample(size, seed, block))
        done += size
        block += 1
    sample = WalkSample(
        np.concatenate([s.ups for s in parts]),
        np.concatenate([s.marks for s in parts]),
        np.concatenate([s.x_cont for s in parts]),
        np.concatenate([s.x_jump for s in parts]),
    )
    return PathBundle.from_sample(driver, sample)


def _mc_gamma(record: PathRecord, lam: float, h: float, convention: str, delta: float) -> float:
    if lam == 0:
        return 0.0
    Y = record.Y[:, :-1] if convention == "Y_left" else record.Y[:, 1:]
    gamma = (Y ** 2).sum(axis=1) * h
    return float((gamma ** (1.0 + delta)).mean())


def _mc_row(problem: ReferenceProblem, k: int, cfg: ExperimentConfig) -> RowResult:
    bundle = sample_paths(problem, k, cfg.n_paths, cfg.seed, cfg.block_size)
    phi = problem.lam ** 2 * bundle.h
    beta, cert = _certificate(phi, cfg.beta_hat)
    certified = bool(cert is not None and cert.passes_quarter)
    if not certified:
        logger.warning("Uncertified Picard iteration at k=%d (beta=%g, phi=%g)", k, beta, phi)
    limit = problem.limit_record(bundle)
    j1_index = np.arange(min(cfg.j1_paths, bundle.n_paths))
    cells: Dict[str, List[float]] = {m: [] for m in METRICS}
    stderr: Dict[str, List[float]] = {m: [] for m in METRICS}
    est = None
    record = None
    for p in list(range(1, cfg.p_max + 1)) + [None]:
        record = problem.discrete_record(bundle, p, cfg.convention)
        est = distance_estimators(record, limit, bundle, j1_index=j1_index)
        gap = 0.0 if p is None else problem.closed_form_star_gap(bundle, p, beta, cfg.convention)
        _fill(cells, stderr, est, gap)
    envelope_ok = None
    if certified:
        first = problem.closed_form_star_gap(bundle, 1, beta, cfg.convention, to_fixed=False)
        envelope_ok = bool(all(
            cells["picard_gap"][p - 1] <= picard_tail_bound(first, p) * (1 + 1e-9) + 1e-300
            for p in range(1, cfg.p_max + 1)
        ))
    return RowResult(
        k=k,
        mode="monte-carlo",
        cells=cells,
        stderr=stderr,
        brackets=dict(est.brackets),
        y0=problem.y0_discrete(k, cfg.convention),
        y0_limit=float(problem.limit_y(0.0, np.zeros(1), np.zeros(1))[0]),
        gamma_moment=_mc_gamma(record, problem.lam, bundle.h, cfg.convention, cfg.ui_delta),
        beta=beta,
        certified=certified,
        envelope_ok=envelope_ok,
        conditions_ok=None,
        n_paths=bundle.n_paths,
    )


def run_row(config: ExperimentConfig, k: int) -> RowResult:
    problem = reference_problem(config.problem, **config.problem_params())
    mode = _use_tree(problem, k, config)
    logger.info("experiment %s: row k=%d (%s)", config.problem, k, "tree" if mode else "monte-carlo")
    row = _tree_row(problem, k, config) if mode else _mc_row(problem, k, config)
    logger.info("row k=%d done: Y0=%.6g (limit %.6g)", k, row.y0, row.y0_limit)
    return row


def _row_task(args) -> RowResult:
    doc, k = args
    return run_row(ExperimentConfig.model_validate(doc), k)


# --- table -------------------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    """Cells ``cells[metric]`` of shape (K, P + 1); the last column is the row fixed point."""

    ks: List[int]
    ps: List[int]
    cells: Dict[str, np.ndarray]
    stderr: Dict[str, np.ndarray] = field(default_factory=dict)
    rows: List[RowResult] = field(default_factory=list)
    config: Dict = field(default_factory=dict)
    verdicts: Dict[str, MooreOsgoodVerdict] = field(default_factory=dict)
    tol: float = 0.05

    @classmethod
    def empty(cls, p_max: int, tol: float = 0.05) -> "ConvergenceTable":
        ps = list(range(1, p_max + 1))
        return cls([], ps, {m: np.zeros((0, p_max + 1)) for m in METRICS}, tol=tol)

    @classmethod
    def from_rows(cls, rows: Sequence[RowResult], p_max: int, config: Optional[Dict] = None, tol: float = 0.05) -> "ConvergenceTable":
        if not rows:
            return cls.empty(p_max, tol)
        cells = {m: np.array([r.cells[m] for r in rows], dtype=float) for m in METRICS}
        stderr = {m: np.array([r.stderr[m] for r in rows], dtype=float) for m in METRICS}
        return cls([r.k for r in rows], list(range(1, p_max + 1)), cells, stderr, list(rows), dict(config or {}), tol=tol)

    @property
    def shape(self):
        return len(self.ks), len(self.ps) + 1

    def double_table(self, metric: str) -> DoubleTable:
        entries = self.cells[metric]
        return DoubleTable(entries[:, :-1], self.ks, self.ps, row_limits=entries[:, -1], metric=metric)

    def frame(self, metric: str) -> pd.DataFrame:
        return pd.DataFrame(
            self.cells[metric],
            index=pd.Index([f"k={k}" for k in self.ks], name="k"),
            columns=[f"p{p}" for p in self.ps] + ["pinf"],
        )

    def run_moore_osgood(self) -> Dict[str, MooreOsgoodVerdict]:
        self.verdicts = {}
        if len(self.ks) < 3 or len(self.ps) < 3:
            logger.warning("Table %dx%d is too small for Moore-Osgood checks", len(self.ks), len(self.ps))
            return self.verdicts
        for metric in METRICS:
            table = self.double_table(metric)
            self.verdicts[f"{metric}:A"] = moore_osgood_a(table, self.tol)
            self.verdicts[f"{metric}:B"] = moore_osgood_b(table, self.tol)
        return self.verdicts

    @property
    def passed(self) -> bool:
        a = [v for name, v in self.verdicts.items() if name.endswith(":A")]
        return bool(a) and all(v.passed for v in a)

    def _column_report(self, metric: str) -> Dict:
        col = self.cells[metric][:, -1] if len(self.ks) else np.zeros(0)
        return {
            "fixed_point": col.tolist(),
            "decreasing_in_k": bool(np.all(np.diff(col) <= 1e-12)),
        }

    def report(self) -> Dict:
        """The three-way convergence report plus N → 0, Y₀ errors and the Γ proxy."""
        orth = self.cells["orthogonal_n"]
        moments = [r.gamma_moment for r in self.rows]
        return {
            "paths": {"path_j1": self._column_report("path_j1"), "terminal_l2": self._column_report("terminal_l2")},
            "square_brackets": self._column_report("square_brackets"),
            "angle_brackets": self._column_report("angle_brackets"),
            "orthogonal_n": {
                "max": float(orth.max()) if orth.size else 0.0,
                "below_tol": bool(orth.size == 0 or orth.max() <= self.tol),
            },
            "y0_error": [r.y0_error for r in self.rows],
            "gamma_ui": {"moments": moments, "max": max(moments, default=0.0)},
            "picard_envelope_ok": [r.envelope_ok for r in self.rows],
            "moore_osgood": {
                name: {"passed": v.passed, "joint_limit": v.joint_limit, "joint_below_tol": abs(v.joint_limit) <= self.tol}
                for name, v in sorted(self.verdicts.items())
            },
            "passed": self.passed,
        }

    def to_dict(self) -> Dict:
        return {
            "config": self.config,
            "ks": list(self.ks),
            "ps": list(self.ps),
            "cells": {m: self.cells[m].tolist() for m in METRICS},
            "rows": [r.to_dict() for r in self.rows],
            "verdicts": {name: v.to_dict() for name, v in sorted(self.verdicts.items())},
            "report": self.report(),
        }


def stability_experiment(config: Union[ExperimentConfig, LabConfig, Dict]) -> ConvergenceTable:
    """Fill the (k, p) table for ``config`` and run the Moore-Osgood checks on every metric."""
    if isinstance(config, LabConfig):
        config = config.experiment
    elif isinstance(config, dict):
        config = parse_config(config).experiment
    # unknown problems fail before any row runs
    reference_problem(config.problem, **config.problem_params())
    doc = config.to_document()
    logger.info("experiment %s: k=%s, p_max=%d, workers=%d", config.problem, config.k_list, config.p_max, config.workers)
    if config.workers > 1 and len(config.k_list) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_row_task, [(doc, k) for k in config.k_list]))
    else:
        rows = [run_row(config, k) for k in config.k_list]
    table = ConvergenceTable.from_rows(rows, config.p_max, doc, config.tol)
    table.run_moore_osgood()
    logger.info("experiment %s finished: %s", config.problem, "PASS" if table.passed else "FAIL")
    return table


# --- reports -------------------------------------------------------------------------------


def _summary_text(table: ConvergenceTable) -> str:
    lines = [f"problem: {table.config.get('problem', '-')}", f"rows k: {table.ks}", f"columns p: {table.ps} + fixed point"]
    for metric in METRICS:
        lines.append("")
        lines.append(f"[{metric}]")
        lines.append(table.frame(metric).to_string(float_format=lambda x: f"{x:.6e}") if table.ks else "(empty)")
    if table.rows:
        lines.append("")
        lines.append("k, Y0, Y0 limit, |error|, E[Gamma^(1+delta)]")
        for r in table.rows:
            lines.append(f"{r.k}, {r.y0:.10g}, {r.y0_limit:.10g}, {r.y0_error:.3e}, {r.gamma_moment:.6g}")
    lines.append("")
    for name, v in sorted(table.verdicts.items()):
        lines.append(f"moore-osgood {name}: {'PASS' if v.passed else 'FAIL'} joint={v.joint_limit:.4g}")
    lines.append(f"verdict: {'PASS' if table.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def emit_report(table: ConvergenceTable, out_dir: Union[str, Path], stem: str = "convergence") -> List[Path]:
    """CSV per metric, one JSON document, one text summary; byte-stable for a fixed seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for metric in METRICS:
        path = out / f"{stem}_{metric}.csv"
        table.frame(metric).to_csv(path, float_format="%.17g")
        written.append(path)
    doc = out / f"{stem}.json"
    doc.write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n")
    written.append(doc)
    summary = out / f"{stem}.txt"
    summary.write_text(_summary_text(table))
    written.append(summary)
    logger.info("wrote %d report files to %s", len(written), out)
    return written


def load_table_csv(path: Union[str, Path], metric: str = "abs") -> DoubleTable:
    """Read a metric CSV; a trailing ``pinf`` column becomes the row limits."""
    frame = pd.read_csv(path, index_col=0)
    if frame.shape[0] == 0:
        raise DimensionMismatchError(f"{path}: table has no rows")
    if frame.columns[-1] == "pinf":
        limits = frame.iloc[:, -1].to_numpy(dtype=float)
        table = DoubleTable.from_frame(frame.iloc[:, :-1], metric=metric)
        return DoubleTable(table.entries, table.ks, table.ps, row_limits=limits, metric=metric)
    return DoubleTable.from_frame(frame, metric=metric)
