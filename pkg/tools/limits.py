#!/usr/bin/env python3
"""
limits.py
---------
Moore-Osgood diagnostics for doubly-indexed tables gamma[k, p].

Suprema over an index run over the available grid only; every verdict carries
the grid size so it is read as a finite-resolution check, never a proof.
Limits along an index are estimated from the trailing half of the grid, which
keeps transient pre-asymptotic rows (typical of Picard tables) out of the way.

Tables round-trip through CSV: header ``p1 p2 ...``, row labels ``k=...``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DimensionMismatchError, TableShapeError

logger = logging.getLogger(__name__)

TolSchedule = Union[float, Callable[[float], float]]

DEFAULT_TOL = 0.05


@dataclass(frozen=True, eq=False)
class DoubleTable:
    """Entries ``gamma[k, p]`` (real, or points of R^d in a trailing axis).

    ``row_limits[k]`` is gamma[k, inf] (limit in p), ``col_limits[p]`` is
    gamma[inf, p] (limit in k); both optional.
    """

    entries: np.ndarray
    ks: Sequence = ()
    ps: Sequence = ()
    row_limits: Optional[np.ndarray] = None
    col_limits: Optional[np.ndarray] = None
    metric: str = "abs"

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim not in (2, 3):
            raise DimensionMismatchError("Table entries must be a (K, P) or (K, P, d) array")
        K, P = entries.shape[:2]
        ks = list(self.ks) if len(self.ks) else list(range(1, K + 1))
        ps = list(self.ps) if len(self.ps) else list(range(1, P + 1))
        if len(ks) != K or len(ps) != P:
            raise DimensionMismatchError("Index labels do not match the table shape")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "ps", ps)
        for name, n in (("row_limits", K), ("col_limits", P)):
            lim = getattr(self, name)
            if lim is None:
                continue
            lim = np.asarray(lim, dtype=float)
            if lim.shape != (n,) + entries.shape[2:]:
                raise DimensionMismatchError(f"{name} must be indexed like the table")
            object.__setattr__(self, name, lim)

    @classmethod
    def from_function(cls, fn: Callable[[int, int], float], ks: Sequence[int], ps: Sequence[int], **kwargs) -> "DoubleTable":
        entries = np.array([[fn(k, p) for p in ps] for k in ks], dtype=float)
        return cls(entries, list(ks), list(ps), **kwargs)

    @property
    def shape(self):
        return self.entries.shape[:2]

    @property
    def is_real(self) -> bool:
        return self.entries.ndim == 2

    def transpose(self) -> "DoubleTable":
        axes = (1, 0) + tuple(range(2, self.entries.ndim))
        return DoubleTable(
            np.transpose(self.entries, axes),
            self.ps,
            self.ks,
            row_limits=self.col_limits,
            col_limits=self.row_limits,
            metric=self.metric,
        )

    def distance(self, a, b) -> np.ndarray:
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.is_real:
            return np.abs(diff)
        return np.linalg.norm(diff, axis=-1)

    # --- CSV ----------------------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        if not self.is_real:
            raise DimensionMismatchError("Only real-valued tables have a CSV form")
        return pd.DataFrame(
            self.entries,
            index=[f"k={k}" for k in self.ks],
            columns=[f"p{p}" for p in self.ps],
        )

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, float_format="%.17g")
        return path

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, metric: str = "abs") -> "DoubleTable":
        ks = [_label_value(str(lbl), "k=") for lbl in frame.index]
        ps = [_label_value(str(lbl), "p") for lbl in frame.columns]
        return cls(frame.to_numpy(dtype=float), ks, ps, metric=metric)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "DoubleTable":
        frame = pd.read_csv(path, index_col=0)
        return cls.from_frame(frame)


def _label_value(label: str, prefix: str):
    raw = label[len(prefix):] if label.startswith(prefix) else label
    try:
        value = float(raw)
    except ValueError:
        return raw
    return int(value) if value.is_integer() else value


@dataclass
class MooreOsgoodVerdict:
    variant: str
    passed: bool
    condition_i: bool
    condition_ii: bool
    joint_limit: float
    iterated_k_then_p: Optional[float]
    iterated_p_then_k: Optional[float]
    discrepancy: Optional[float]
    grid: tuple
    failures: List[str] = field(default_factory=list)
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "variant": self.variant,
            "passed": self.passed,
            "condition_i": self.condition_i,
            "condition_ii": self.condition_ii,
            "joint_limit": self.joint_limit,
            "iterated_k_then_p": self.iterated_k_then_p,
            "iterated_p_then_k": self.iterated_p_then_k,
            "discrepancy": self.discrepancy,
            "grid": list(self.grid),
            "failures": list(self.failures),
            "diagnostics": self.diagnostics,
        }


def _tol_at(tol: TolSchedule, index) -> float:
    return float(tol(index)) if callable(tol) else float(tol)


def _check_shape(table: DoubleTable) -> None:
    K, P = table.shape
    if K < 3 or P < 3:
        raise TableShapeError(f"Table of shape {K}x{P} is too small; need at least 3x3")


def _scalar(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else float(np.linalg.norm(x))


def _uniform_tail(table: DoubleTable, tol: TolSchedule):
    """Condition (i): sup_k d(gamma[k, p], gamma[k, inf]) small over the trailing half of p."""
    g = table.entries
    P = table.shape[1]
    if table.row_limits is not None:
        limits, cols = table.row_limits, np.arange(P)
    else:
        limits, cols = g[:, -1], np.arange(P - 1)
    sups = np.array([table.distance(g[:, j], limits).max() for j in cols])
    tail = cols[len(cols) // 2:]
    offenders = [table.ps[j] for j in tail if sups[j] > _tol_at(tol, table.ps[j])]
    logger.debug("uniform p-tail sups (trailing half): %s", sups[len(cols) // 2:])
    return not offenders, sups, offenders, limits


def _column_convergence(table: DoubleTable, tol: TolSchedule):
    """Condition (ii): every column converges in k (declared limits or trailing Cauchy spread)."""
    g = table.entries
    K = table.shape[0]
    tail = np.arange(K // 2, K)
    if table.col_limits is not None:
        spread = np.array(
            [table.distance(g[tail, j], table.col_limits[j]).max() for j in range(table.shape[1])]
        )
    else:
        spread = np.array(
            [table.distance(g[tail, j], g[-1, j]).max() for j in range(table.shape[1])]
        )
    offenders = [table.ps[j] for j in range(len(spread)) if spread[j] > _tol_at(tol, table.ks[-1])]
    logger.debug("column spreads over trailing k: %s", spread)
    return not offenders, spread


def moore_osgood_a(table: DoubleTable, tol: TolSchedule = DEFAULT_TOL, uniform_both: bool = False) -> MooreOsgoodVerdict:
    """Uniform convergence in p plus convergence of every column in k.

    With ``uniform_both`` the same two checks also run with the roles of k and
    p exchanged and all four must pass, which makes the verdict invariant under
    ``table.transpose()``.
    """
    _check_shape(table)
    cond_i, sups, offenders, row_lim = _uniform_tail(table, tol)
    cond_ii, spread = _column_convergence(table, tol)
    failures = []
    if not cond_i:
        failures.append(f"condition (i): sup_k distance above tol at p in {offenders}")
    if not cond_ii:
        failures.append("condition (ii): columns not convergent in k")
    diagnostics: Dict[str, object] = {
        "uniform_sups": sups.tolist(),
        "column_spread": spread.tolist(),
    }
    if uniform_both:
        t_i, t_sups, t_off, _ = _uniform_tail(table.transpose(), tol)
        t_ii, t_spread = _column_convergence(table.transpose(), tol)
        cond_i, cond_ii = cond_i and t_i, cond_ii and t_ii
        if not t_i:
            failures.append(f"transposed condition (i): sup_p distance above tol at k in {t_off}")
        if not t_ii:
            failures.append("transposed condition (ii): rows not convergent in p")
        diagnostics["transposed_uniform_sups"] = t_sups.tolist()
        diagnostics["transposed_spread"] = t_spread.tolist()

    m = min(table.shape) - 1
    joint = _scalar(table.entries[m, m])
    k_then_p = _scalar(row_lim[-1])
    col_lim = table.col_limits if table.col_limits is not None else table.entries[-1, :]
    p_then_k = _scalar(col_lim[-1])
    discrepancy = abs(k_then_p - p_then_k)
    verdict = MooreOsgoodVerdict(
        variant="A",
        passed=cond_i and cond_ii,
        condition_i=cond_i,
        condition_ii=cond_ii,
        joint_limit=joint,
        iterated_k_then_p=k_then_p,
        iterated_p_then_k=p_then_k,
        discrepancy=discrepancy,
        grid=table.shape,
        failures=failures,
        diagnostics=diagnostics,
    )
    logger.debug("moore-osgood A on %dx%d: %s", *table.shape, verdict.passed)
    return verdict


def moore_osgood_b(table: DoubleTable, tol: TolSchedule = DEFAULT_TOL) -> MooreOsgoodVerdict:
    """Uniform p-tail plus a vanishing limsup - liminf gap along k.

    The gap of column p is max - min of gamma[k, p] over the trailing half of
    k; condition (ii) asks that the gap in the last column be within tol. The
    joint limit is the midpoint of that column's trailing range.
    """
    if not table.is_real:
        raise DimensionMismatchError("Moore-Osgood B needs real-valued entries")
    _check_shape(table)
    cond_i, sups, offenders, row_lim = _uniform_tail(table, tol)
    K = table.shape[0]
    tail = table.entries[K // 2:, :]
    hi, lo = tail.max(axis=0), tail.min(axis=0)
    gaps = hi - lo
    cond_ii = bool(gaps[-1] <= _tol_at(tol, table.ps[-1]))
    failures = []
    if not cond_i:
        failures.append(f"condition (i): sup_k distance above tol at p in {offenders}")
    if not cond_ii:
        failures.append(f"condition (ii): limsup - liminf gap {gaps[-1]:.4g} along k")
    mid = 0.5 * (hi + lo)
    joint = float(mid[-1])
    k_then_p = float(row_lim[-1]) if cond_ii else None
    logger.debug("moore-osgood B gaps: %s", gaps)
    return MooreOsgoodVerdict(
        variant="B",
        passed=cond_i and cond_ii,
        condition_i=cond_i,
        condition_ii=cond_ii,
        joint_limit=joint,
        iterated_k_then_p=k_then_p,
        iterated_p_then_k=joint,
        discrepancy=abs(k_then_p - joint) if k_then_p is not None else None,
        grid=table.shape,
        failures=failures,
        diagnostics={"uniform_sups": sups.tolist(), "limsup_liminf_gaps": gaps.tolist()},
    )
