#!/usr/bin/env python3
"""
measures.py
-----------
Finite measures on the half-line and the weak-convergence toolkit.

A ``FiniteMeasure`` is an atomic part plus an absolutely continuous part with
piecewise-linear distribution function. Everything here is exact on that
class: distribution functions are affine between merged breakpoints, so every
supremum is attained (or approached from the left) at a breakpoint.

USAGE
    mu = FiniteMeasure.uniform_atoms(10)
    nu = FiniteMeasure.lebesgue(0.0, 1.0)
    ks_distance(mu, nu)                  # 0.1
    interval_sup_distance(mu, nu, 1.0)   # 0.1

Text record::

    atoms: (0.5,0.25) (1,0.75)
    plinear: (0,0) (1,1)
"""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import LabError, WindowError
from .limits import DoubleTable, MooreOsgoodVerdict, moore_osgood_b
from .paths import (
    LinearPath,
    SparsePartition,
    StepPath,
    check_uniform_bounded,
    j1_distance,
    sparse_partition,
)

logger = logging.getLogger(__name__)

Integrand = Union[StepPath, LinearPath]

_PAIR_RE = re.compile(r"\(([^,()]+),([^,()]+)\)")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class FiniteMeasure:
    """Atoms ``(atom_locations, atom_masses)`` plus a continuous part whose
    distribution function is linear between ``knots`` with values ``cdf_values``.

    Atoms at 0 are rejected unless ``allow_origin`` is set (sparse
    discretizations place mass on the left knot 0).
    """

    atom_locations: np.ndarray
    atom_masses: np.ndarray
    knots: np.ndarray
    cdf_values: np.ndarray
    allow_origin: bool = False

    def __post_init__(self):
        loc = np.asarray(self.atom_locations, dtype=float).reshape(-1)
        mass = np.asarray(self.atom_masses, dtype=float).reshape(-1)
        if loc.size != mass.size:
            raise LabError("One mass per atom location is required")
        if np.any(mass <= 0) or not np.all(np.isfinite(mass)):
            raise LabError("Atom masses must be positive and finite")
        if np.any(loc < 0) or (not self.allow_origin and np.any(loc == 0)):
            raise LabError("Atoms must sit in (0, inf); the measure may not charge {0}")
        order = np.argsort(loc, kind="stable")
        loc, mass = loc[order], mass[order]
        if loc.size:
            uniq, inv = np.unique(loc, return_inverse=True)
            merged = np.zeros(uniq.size)
            np.add.at(merged, inv, mass)
            loc, mass = uniq, merged
        knots = np.asarray(self.knots, dtype=float).reshape(-1)
        cdf = np.asarray(self.cdf_values, dtype=float).reshape(-1)
        if knots.size == 0:
            knots, cdf = np.zeros(1), np.zeros(1)
        if knots.size != cdf.size or knots[0] != 0.0 or cdf[0] != 0.0:
            raise LabError("Continuous part must start at (0, 0) with one value per knot")
        if np.any(np.diff(knots) <= 0) or np.any(np.diff(cdf) < 0):
            raise LabError("Continuous distribution function must be nondecreasing on increasing knots")
        object.__setattr__(self, "atom_locations", loc)
        object.__setattr__(self, "atom_masses", mass)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "cdf_values", cdf)

    # --- constructors -------------------------------------------------------

    @classmethod
    def atomic(cls, locations: Sequence[float], masses: Sequence[float]) -> "FiniteMeasure":
        return cls(locations, masses, [0.0], [0.0])

    @classmethod
    def lebesgue(cls, a: float = 0.0, b: float = 1.0, density: float = 1.0) -> "FiniteMeasure":
        """``density`` times Lebesgue measure on [a, b]."""
        if not 0 <= a < b:
            raise WindowError(f"Need 0 <= a < b, got [{a}, {b}]")
        if a > 0:
            return cls([], [], [0.0, a, b], [0.0, 0.0, density * (b - a)])
        return cls([], [], [0.0, b], [0.0, density * b])

    @classmethod
    def uniform_atoms(cls, k: int, scale: float = 1.0, total: float = 1.0) -> "FiniteMeasure":
        """Atoms at j * scale / k, j = 1..k, mass total / k each."""
        j = np.arange(1, k + 1, dtype=float)
        return cls.atomic(j * scale / k, np.full(k, total / k))

    @classmethod
    def zero(cls) -> "FiniteMeasure":
        return cls.atomic([], [])

    # --- distribution function ----------------------------------------------

    def _continuous(self, t):
        return np.interp(t, self.knots, self.cdf_values)

    def F(self, t):
        t_arr = np.asarray(t, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.atom_masses)])
        atoms = cum[np.searchsorted(self.atom_locations, t_arr, side="right")]
        return atoms + self._continuous(t_arr)

    def F_left(self, t):
        t_arr = np.asarray(t, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.atom_masses)])
        atoms = cum[np.searchsorted(self.atom_locations, t_arr, side="left")]
        return atoms + self._continuous(t_arr)

    @property
    def mass(self) -> float:
        return float(self.atom_masses.sum() + self.cdf_values[-1])

    @property
    def max_jump(self) -> float:
        return float(self.atom_masses.max()) if self.atom_masses.size else 0.0

    @property
    def is_atomless(self) -> bool:
        return self.atom_locations.size == 0

    @property
    def support_end(self) -> float:
        last_atom = float(self.atom_locations[-1]) if self.atom_locations.size else 0.0
        return max(last_atom, float(self.knots[-1]))

    def breakpoints(self, upto: Optional[float] = None) -> np.ndarray:
        pts = np.unique(np.concatenate([self.atom_locations, self.knots]))
        if upto is not None:
            pts = pts[pts <= upto]
        return pts

    def tail_mass(self, N: float) -> float:
        """mu([N, inf))."""
        return float(self.mass - self.F_left(N))

    def __add__(self, other: "FiniteMeasure") -> "FiniteMeasure":
        knots = np.unique(np.concatenate([self.knots, other.knots]))
        cdf = self._continuous(knots) + other._continuous(knots)
        return FiniteMeasure(
            np.concatenate([self.atom_locations, other.atom_locations]),
            np.concatenate([self.atom_masses, other.atom_masses]),
            knots,
            cdf,
            allow_origin=self.allow_origin or other.allow_origin,
        )

    def distribution_path(self, N: float, resolution: int = 1024) -> StepPath:
        """F on [0, N] as a step path: exact at atoms, sampled where continuous."""
        grid = np.unique(np.concatenate([np.linspace(0.0, N, resolution + 1), self.breakpoints(N)]))
        if self.cdf_values[-1] == 0:
            grid = np.unique(np.concatenate([[0.0, N], self.atom_locations[self.atom_locations <= N]]))
        return StepPath.from_grid(grid, self.F(grid)[:, None])

    # --- text record --------------------------------------------------------

    def to_text(self) -> str:
        atoms = " ".join(f"({_fmt(t)},{_fmt(m)})" for t, m in zip(self.atom_locations, self.atom_masses))
        plin = " ".join(f"({_fmt(t)},{_fmt(f)})" for t, f in zip(self.knots, self.cdf_values))
        return f"atoms: {atoms}\nplinear: {plin}\n"

    @classmethod
    def from_text(cls, text: str) -> "FiniteMeasure":
        fields: Dict[str, List] = {"atoms": [], "plinear": []}
        for line in text.strip().splitlines():
            key, _, rest = line.partition(":")
            key = key.strip()
            if key not in fields:
                raise LabError(f"Unknown measure record line: {line!r}")
            fields[key] = [(float(a), float(b)) for a, b in _PAIR_RE.findall(rest)]
        atoms = np.array(fields["atoms"], dtype=float).reshape(-1, 2)
        plin = np.array(fields["plinear"], dtype=float).reshape(-1, 2)
        origin = bool(atoms.size and np.any(atoms[:, 0] == 0))
        return cls(atoms[:, 0], atoms[:, 1], plin[:, 0], plin[:, 1], allow_origin=origin)


# --- distances -----------------------------------------------------------------


def _difference_samples(mu: FiniteMeasure, nu: FiniteMeasure, N: Optional[float]):
    pts = np.unique(np.concatenate([[0.0], mu.breakpoints(N), nu.breakpoints(N)]))
    if N is not None:
        pts = np.unique(np.append(pts, N))
    right = mu.F(pts) - nu.F(pts)
    left = mu.F_left(pts[1:]) - nu.F_left(pts[1:])
    return right, left


def ks_distance(mu: FiniteMeasure, nu: FiniteMeasure, window: Optional[float] = None) -> float:
    """sup |F_mu - F_nu| over [0, inf] (total masses at inf), or over [0, window]."""
    right, left = _difference_samples(mu, nu, window)
    vals = np.abs(np.concatenate([right, left]))
    if window is None:
        vals = np.append(vals, abs(mu.mass - nu.mass))
    return float(vals.max())


def interval_sup_distance(mu: FiniteMeasure, nu: FiniteMeasure, N: float) -> float:
    """sup over subintervals I of [0, N] of |mu(I) - nu(I)|.

    Every interval difference is D(b) - D(a) with each endpoint taken either at
    or just before a point, so the supremum is max - min over those values.
    """
    if not N > 0:
        raise WindowError(f"Window must be positive, got {N}")
    right, left = _difference_samples(mu, nu, N)
    vals = np.concatenate([[0.0], right, left])
    return float(vals.max() - vals.min())


# --- integrals -----------------------------------------------------------------


def _sup_l1(alpha: Integrand, N: Optional[float] = None) -> float:
    N = alpha.T if N is None else N
    if isinstance(alpha, StepPath):
        states = alpha.skeleton(N)[1]
    else:
        pts = np.concatenate([[0.0, N], alpha.breakpoints(N)])
        states = alpha.evaluate(pts)
    return float(np.abs(states).sum(axis=1).max())


def integrate(alpha: Integrand, mu: FiniteMeasure, upto: Optional[float] = None, closed: bool = True) -> np.ndarray:
    """Stieltjes integral of ``alpha`` against ``mu`` over [0, upto] (or [0, upto)).

    Atoms see the cadlag value of alpha; on each density piece alpha is split
    at its own breakpoints and integrated in closed form.
    """
    end = np.inf if upto is None else float(upto)
    total = np.zeros(alpha.d)
    loc, mass = mu.atom_locations, mu.atom_masses
    sel = loc <= end if closed else loc < end
    if np.any(sel):
        total += (mass[sel][:, None] * alpha.evaluate(loc[sel])).sum(axis=0)
    kt, kf = mu.knots, mu.cdf_values
    if kt.size > 1:
        if isinstance(alpha, StepPath):
            inner = alpha.times
        else:
            inner = alpha.knots
        hi_cap = min(end, float(kt[-1]))
        edges = np.unique(np.concatenate([kt[kt <= hi_cap], inner[(inner > 0) & (inner < hi_cap)], [hi_cap]]))
        if edges.size > 1:
            x, y = edges[:-1], edges[1:]
            piece = np.clip(np.searchsorted(kt, x, side="right") - 1, 0, kt.size - 2)
            rho = np.diff(kf)[piece] / np.diff(kt)[piece]
            avg = 0.5 * (alpha.evaluate(x) + alpha.left_limit(y))
            total += ((rho * (y - x))[:, None] * avg).sum(axis=0)
    return total


def running_integral(alpha: Integrand, mu: FiniteMeasure, resolution: int = 256) -> StepPath:
    """t -> integral of alpha over [0, t], as a step path exact at its knots."""
    T = alpha.T
    inner = alpha.times if isinstance(alpha, StepPath) else alpha.knots
    knots = np.unique(
        np.concatenate(
            [
                np.linspace(0.0, T, resolution + 1),
                mu.atom_locations[mu.atom_locations <= T],
                mu.knots[mu.knots <= T],
                inner[(inner >= 0) & (inner <= T)],
            ]
        )
    )
    vals = np.array([integrate(alpha, mu, t) for t in knots])
    return StepPath.from_grid(knots, vals)


def discretize_sparse(mu: FiniteMeasure, P: SparsePartition) -> FiniteMeasure:
    """Move the mass of each cell [t_{i-1}, t_i) onto its left knot."""
    knots = P.knots
    cell_mass = mu.F_left(knots[1:]) - mu.F_left(knots[:-1])
    keep = cell_mass > 0
    return FiniteMeasure(knots[:-1][keep], cell_mass[keep], [0.0], [0.0], allow_origin=True)


# --- weak convergence ------------------------------------------------------------


@dataclass
class CriterionTrace:
    name: str
    values: List[Optional[float]]
    tol: float
    last_violation: Optional[int] = None
    first_pass: Optional[int] = None

    def settle(self, labels: Sequence) -> None:
        bad = [i for i, v in enumerate(self.values) if v is not None and v > self.tol]
        self.last_violation = labels[bad[-1]] if bad else None
        nxt = (bad[-1] + 1) if bad else 0
        self.first_pass = labels[nxt] if nxt < len(labels) else None


@dataclass
class WeakConvergenceReport:
    labels: List
    criteria: Dict[str, CriterionTrace]
    max_mass: float
    atomless_limit: bool
    lemma_check: List[bool] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "labels": list(self.labels),
            "criteria": {k: asdict(v) for k, v in self.criteria.items()},
            "max_mass": self.max_mass,
            "atomless_limit": self.atomless_limit,
            "lemma_check": self.lemma_check,
            "notes": self.notes,
        }


def weak_convergence_report(
    seq: Sequence[FiniteMeasure],
    limit: FiniteMeasure,
    windows: Union[float, Sequence[float]],
    tol: float,
    labels: Optional[Sequence] = None,
    resolution: int = 1024,
) -> WeakConvergenceReport:
    """Evaluate the equivalent weak-convergence criteria index by index.

    (b) pointwise on merged breakpoints and midpoints, (c) windowed J1 of the
    distribution functions, (d) locally uniform, (e) interval supremum, plus
    total-mass boundedness and a tightness proxy (mass beyond the largest
    window). The equivalence predicts the criteria settle together.
    """
    windows = [float(windows)] if np.isscalar(windows) else [float(w) for w in windows]
    labels = list(labels) if labels is not None else list(range(1, len(seq) + 1))
    atomless = limit.is_atomless
    notes: List[str] = []
    if not atomless:
        notes.append("atomless hypothesis violated: criteria (c) and (e) skipped")
        logger.warning("Limit measure has atoms; running the pointwise and uniform checks only")
    traces = {name: CriterionTrace(name, [], tol) for name in ("b", "c", "d", "e", "tightness")}
    lemma: List[bool] = []
    n_big = max(windows)
    limit_paths = {N: limit.distribution_path(N, resolution) for N in windows} if atomless else {}
    for mu in seq:
        b = c = d = e = 0.0
        for N in windows:
            pts = np.unique(np.concatenate([[0.0, N], mu.breakpoints(N), limit.breakpoints(N)]))
            grid = np.concatenate([pts, 0.5 * (pts[1:] + pts[:-1])])
            b = max(b, float(np.abs(mu.F(grid) - limit.F(grid)).max()))
            d = max(d, ks_distance(mu, limit, window=N))
            if atomless:
                c = max(c, j1_distance(mu.distribution_path(N, resolution), limit_paths[N], N))
                e = max(e, interval_sup_distance(mu, limit, N))
        traces["b"].values.append(b)
        traces["d"].values.append(d)
        traces["c"].values.append(c if atomless else None)
        traces["e"].values.append(e if atomless else None)
        traces["tightness"].values.append(float(mu.mass - mu.F(n_big)))
        if atomless:
            delta = max(c, abs(mu.mass - limit.mass))
            lemma.append(bool(ks_distance(mu, limit) <= 6.0 * delta + 1e-12))
    for tr in traces.values():
        tr.settle(labels)
    max_mass = max((mu.mass for mu in seq), default=0.0)
    return WeakConvergenceReport(labels, traces, max_mass, atomless, lemma, notes)


# --- uniform integral gaps ---------------------------------------------------------


@dataclass
class UniformGap:
    exact_gap: float
    certificate: float
    members: List[Dict[str, float]]


def _default_partition(alpha: Integrand, N: float, zeta: Optional[float], eps: float) -> SparsePartition:
    if isinstance(alpha, StepPath):
        inner = alpha.times[(alpha.times > 0) & (alpha.times < N)]
        if zeta is None:
            pts = np.concatenate([[0.0], inner])
            gaps = np.diff(pts)
            zeta = 0.5 * float(gaps.min()) if gaps.size else 0.5 * N
            zeta = min(zeta, 0.5 * N)
        return sparse_partition(alpha, N, zeta, eps)
    cells = 16 if zeta is None else max(1, int(np.floor(N / zeta)) - 1)
    return SparsePartition(np.linspace(0.0, N, cells + 1), N / (2.0 * cells))


def uniform_weak_gap(
    family: Sequence[Integrand],
    mu_k: FiniteMeasure,
    mu_inf: FiniteMeasure,
    N: float,
    eps: float,
    zeta: Optional[float] = None,
) -> UniformGap:
    """sup over the family of |int alpha dmu_k - int alpha dmu_inf|, and a certificate.

    The certificate adds the tail masses beyond N, the exact errors of moving
    each measure onto the left knots of a sparse partition, and the
    interval-supremum term times sup|alpha| times the number of cells.
    """
    if not mu_inf.is_atomless:
        raise LabError("Limit measure must be atomless")
    # the family is finite, so nothing lies beyond it
    report = check_uniform_bounded(family, tail_bound=0.0)
    if not report.passed:
        raise LabError(f"Family is not uniformly bounded: {report.failures}")
    isup = interval_sup_distance(mu_k, mu_inf, N)
    tails = mu_k.tail_mass(N) + mu_inf.tail_mass(N)
    members = []
    for alpha in family:
        gap = float(np.abs(integrate(alpha, mu_k) - integrate(alpha, mu_inf)).sum())
        part = _default_partition(alpha, N, zeta, eps)
        sup_a = _sup_l1(alpha)
        disc = 0.0
        for mu in (mu_k, mu_inf):
            head = integrate(alpha, mu, N, closed=False)
            moved = integrate(alpha, discretize_sparse(mu, part), N, closed=False)
            disc += float(np.abs(head - moved).sum())
        cert = sup_a * tails + disc + sup_a * part.n_cells * isup
        members.append({"gap": gap, "certificate": cert, "cells": part.n_cells})
    exact = max((m["gap"] for m in members), default=0.0)
    certificate = max((m["certificate"] for m in members), default=0.0)
    return UniformGap(exact, certificate, members)


@dataclass
class DoublyIndexedGap:
    table: DoubleTable
    verdict: MooreOsgoodVerdict
    atomless_limit: bool
    converges: bool
    failure_channel: Optional[str]


def doubly_indexed_gap(
    alphas: Sequence[Integrand],
    mus: Sequence[FiniteMeasure],
    mu_inf: FiniteMeasure,
    alpha_limit: Optional[Integrand] = None,
    tol: float = 0.05,
) -> DoublyIndexedGap:
    """gamma[k, m] = ||int alpha^k dmu^m - int alpha^inf dmu^inf||_1 and its joint limit.

    ``alpha_limit`` defaults to the last member of ``alphas``. An atomic limit
    measure is reported through ``failure_channel`` rather than raised.
    """
    alpha_limit = alphas[-1] if alpha_limit is None else alpha_limit
    target = integrate(alpha_limit, mu_inf)
    gamma = np.array(
        [[float(np.abs(integrate(a, mu) - target).sum()) for mu in mus] for a in alphas]
    )
    table = DoubleTable(
        gamma,
        ks=list(range(1, len(alphas) + 1)),
        ps=list(range(1, len(mus) + 1)),
        metric="l1 integral gap",
    )
    verdict = moore_osgood_b(table, tol)
    atomless = mu_inf.is_atomless
    channel = None
    converges = verdict.passed and abs(verdict.joint_limit) <= tol
    if not atomless:
        channel = "atomless hypothesis violated"
    elif not verdict.passed:
        channel = "; ".join(verdict.failures) or "moore-osgood conditions"
    elif not converges:
        channel = "joint limit nonzero"
    if channel:
        logger.info("doubly indexed gap: %s (joint limit %.4g)", channel, verdict.joint_limit)
    return DoublyIndexedGap(table, verdict, atomless, converges and atomless, channel)
