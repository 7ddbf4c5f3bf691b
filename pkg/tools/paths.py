#!/usr/bin/env python3
"""
paths.py
--------
Cadlag step paths on bounded windows and the metrics used to compare them.

WHAT IT DOES
- ``StepPath``: finitely many jumps, right-continuous, constant after the last
  jump. ``LinearPath``: continuous piecewise-linear integrands (x ^ 1 and
  friends) for the exact integral examples.
- ``j1_distance``: the windowed Skorokhod J1 distance, computed exactly by a
  dynamic programme over order-preserving matchings of jump times and a
  bisection over the finite set of candidate values.
- ``sup_distance``, ``w_prime`` (the w'_N modulus over sparse partitions),
  ``sparse_partition``, ``check_uniform_bounded`` and
  ``l2_step_approximation`` (truncate, then quantize on dyadic cells).

Step paths serialize to text: a header ``d T n_jumps``, one ``0 v1 .. vd`` row
for the initial value, then one ``t v1 .. vd`` row per jump, 17 significant
digits so the decimal round trip is bit-exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatchError, LabError, WindowError
from .jit import njit

if TYPE_CHECKING:  # pragma: no cover
    from .measures import FiniteMeasure

logger = logging.getLogger(__name__)

# slack for comparisons between candidate values built from the same floats
_J1_TOL = 1e-12
_DYADIC_BITS = 40


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class StepPath:
    """Finite-jump cadlag path on the window [0, T].

    ``times`` are the jump times, ``values`` the post-jump values (one row per
    jump). A jump at time 0 is folded into ``initial``.
    """

    initial: np.ndarray
    times: np.ndarray
    values: np.ndarray
    T: float

    def __post_init__(self):
        initial = np.atleast_1d(np.asarray(self.initial, dtype=float)).reshape(-1)
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(times.size, initial.size)
        T = float(self.T)
        if not T > 0:
            raise WindowError(f"Window end must be positive, got {T}")
        if times.size:
            if times[0] < 0:
                raise WindowError("Jump times must be nonnegative")
            if np.any(np.diff(times) <= 0):
                raise LabError("Jump times must be strictly increasing")
            if times[-1] >= T:
                raise WindowError(f"Jump time {times[-1]} is not inside [0, {T})")
            if times[0] == 0.0:
                initial = values[0].copy()
                times, values = times[1:], values[1:]
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "T", T)

    # --- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, value, T: float = 1.0) -> "StepPath":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(value, np.empty(0), np.empty((0, value.size)), T)

    @classmethod
    def indicator(cls, at: float, T: float, height=1.0) -> "StepPath":
        """``height * 1_[at, inf)`` on [0, T]."""
        height = np.atleast_1d(np.asarray(height, dtype=float))
        return cls(np.zeros_like(height), [at], height[None, :], T)

    @classmethod
    def from_grid(cls, grid: Sequence[float], states, T: Optional[float] = None) -> "StepPath":
        """Path taking ``states[i]`` on ``[grid[i], grid[i+1])``; ``grid[0]`` must be 0.

        Grid points where the state does not change are dropped.
        """
        grid = np.asarray(grid, dtype=float)
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if grid.size != states.shape[0] or grid[0] != 0.0:
            raise DimensionMismatchError("grid must start at 0 and match the number of states")
        if T is None:
            T = float(grid[-1]) if grid.size > 1 else 1.0
            T = np.nextafter(T, np.inf) if grid.size > 1 else T
        keep = np.any(states[1:] != states[:-1], axis=1)
        return cls(states[0], grid[1:][keep], states[1:][keep], T)

    # --- evaluation ---------------------------------------------------------

    @property
    def d(self) -> int:
        return self.initial.size

    @property
    def n_jumps(self) -> int:
        return self.times.size

    @property
    def states(self) -> np.ndarray:
        """Initial value followed by every post-jump value, shape (n_jumps + 1, d)."""
        return np.vstack([self.initial[None, :], self.values])

    def __call__(self, t):
        return self.evaluate(t)

    def evaluate(self, t):
        """Value at ``t``; constant extension beyond the last jump."""
        idx = np.searchsorted(self.times, t, side="right")
        return self.states[idx]

    def left_limit(self, t):
        idx = np.searchsorted(self.times, t, side="left")
        return self.states[idx]

    def skeleton(self, N: float) -> Tuple[np.ndarray, np.ndarray]:
        """Jump times in (0, N] and the states visited on [0, N]."""
        n = int(np.searchsorted(self.times, N, side="right"))
        return self.times[:n], self.states[: n + 1]

    def restrict(self, N: float) -> "StepPath":
        """The same path on the window [0, N]; a jump exactly at N is kept."""
        if not 0 < N <= self.T:
            raise WindowError(f"Cannot restrict a path on [0, {self.T}] to [0, {N}]")
        times, states = self.skeleton(N)
        return StepPath(states[0], times, states[1:], np.nextafter(N, np.inf))

    def sup_norm(self, N: Optional[float] = None) -> float:
        _, states = self.skeleton(self.T if N is None else N)
        return float(np.max(np.linalg.norm(states, axis=1)))

    # --- text record --------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"{self.d} {_fmt(self.T)} {self.n_jumps}"]
        lines.append(" ".join(["0"] + [_fmt(v) for v in self.initial]))
        for t, row in zip(self.times, self.values):
            lines.append(" ".join([_fmt(t)] + [_fmt(v) for v in row]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "StepPath":
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        if not rows:
            raise LabError("Empty step path record")
        d, T, n = int(rows[0][0]), float(rows[0][1]), int(rows[0][2])
        body = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
        if body.shape != (n + 1, d + 1):
            raise DimensionMismatchError(
                f"Record declares {n} jumps in dimension {d}, found rows of shape {body.shape}"
            )
        return cls(body[0, 1:], body[1:, 0], body[1:, 1:], T)


@dataclass(frozen=True, eq=False)
class LinearPath:
    """Continuous piecewise-linear path through ``(knots[i], values[i])``.

    Constant before the first and after the last knot.
    """

    knots: np.ndarray
    values: np.ndarray
    T: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != knots.size or knots.size == 0:
            raise DimensionMismatchError("one value row per knot is required")
        if np.any(np.diff(knots) <= 0):
            raise LabError("Knots must be strictly increasing")
        if not float(self.T) > 0:
            raise WindowError("Window end must be positive")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def capped_identity(cls, cap: float = 1.0, T: float = 2.0) -> "LinearPath":
        """``x -> min(x, cap)``."""
        return cls([0.0, cap], [[0.0], [cap]], T)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __call__(self, t):
        return self.evaluate(t)

    def evaluate(self, t):
        t_arr = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t_arr, self.knots, self.values[:, q]) for q in range(self.d)], axis=-1)
        return out

    left_limit = evaluate

    def breakpoints(self, N: float) -> np.ndarray:
        return self.knots[(self.knots > 0) & (self.knots <= N)]

    def sup_norm(self, N: Optional[float] = None) -> float:
        N = self.T if N is None else N
        pts = np.concatenate([[0.0, N], self.breakpoints(N)])
        return float(np.max(np.linalg.norm(self.evaluate(pts), axis=1)))


Path = Union[StepPath, LinearPath]


def _check_pair(a: Path, b: Path, N: float) -> None:
    if a.d != b.d:
        raise DimensionMismatchError(f"Path dimensions differ: {a.d} vs {b.d}")
    if not N > 0:
        raise WindowError(f"Window must be positive, got {N}")
    if N > a.T or N > b.T:
        raise WindowError(f"Window {N} exceeds a path window ({a.T}, {b.T})")


def _breakpoints(p: Path, N: float) -> np.ndarray:
    if isinstance(p, StepPath):
        return p.skeleton(N)[0]
    return p.breakpoints(N)


def sup_distance(a: Path, b: Path, N: float, return_location: bool = False):
    """sup over [0, N] of ||a(t) - b(t)||_2, exact on the merged skeleton.

    Between merged breakpoints the difference is affine, so the supremum is
    attained at a breakpoint or approached from its left.
    """
    _check_pair(a, b, N)
    pts = np.unique(np.concatenate([[0.0, N], _breakpoints(a, N), _breakpoints(b, N)]))
    right = np.linalg.norm(a.evaluate(pts) - b.evaluate(pts), axis=1)
    left = np.linalg.norm(a.left_limit(pts[1:]) - b.left_limit(pts[1:]), axis=1)
    vals = np.concatenate([right, left])
    where = int(np.argmax(vals))
    best = float(vals[where])
    if return_location:
        loc = pts[where] if where < pts.size else pts[1:][where - pts.size]
        return best, float(loc)
    return best


# --- Skorokhod J1 ---------------------------------------------------------------


@njit
def _pair_gaps(A, B):
    n, m, d = A.shape[0], B.shape[0], A.shape[1]
    G = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for q in range(d):
                diff = A[i, q] - B[j, q]
                acc += diff * diff
            G[i, j] = math.sqrt(acc)
    return G


@njit
def _j1_feasible(s, t, G, N, eps):
    # E[i, j]: earliest time at which a time change can have performed the
    # first i jumps of a and the first j jumps of b with every visited state
    # pair within eps. b-jumps sit at their own times, a-jumps move within eps.
    n, m = s.size, t.size
    tol = _J1_TOL * (1.0 + N)
    lim = eps + tol
    if G[0, 0] > lim:
        return False
    E = np.full((n + 1, m + 1), np.inf)
    E[0, 0] = 0.0
    for i in range(n + 1):
        for j in range(m + 1):
            e = E[i, j]
            if e == np.inf:
                continue
            nb = t[j] if j < m else N
            if j < m and e <= t[j] + tol and G[i, j + 1] <= lim:
                if t[j] < E[i, j + 1]:
                    E[i, j + 1] = t[j]
            if i < n and G[i + 1, j] <= lim:
                si = s[i]
                lo = max(e, si - eps)
                hi = min(si + eps, nb, N)
                if si >= N:
                    lo = max(lo, N)
                if lo <= hi + tol and lo < E[i + 1, j]:
                    E[i + 1, j] = lo
            if i < n and j < m and G[i + 1, j + 1] <= lim and e <= t[j] + tol:
                if abs(s[i] - t[j]) <= lim and (s[i] >= N) == (t[j] >= N):
                    if t[j] < E[i + 1, j + 1]:
                        E[i + 1, j + 1] = t[j]
    return E[n, m] <= N + tol


@njit
def _j1_kernel(s, A, t, B, N):
    G = _pair_gaps(A, B)
    n, m = s.size, t.size
    cand = np.empty(1 + n * m + G.size)
    c = 0
    cand[c] = 0.0
    c += 1
    for i in range(n):
        for j in range(m):
            cand[c] = abs(s[i] - t[j])
            c += 1
    for i in range(n + 1):
        for j in range(m + 1):
            cand[c] = G[i, j]
            c += 1
    cand = np.unique(cand)
    lo, hi = 0, cand.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _j1_feasible(s, t, G, N, cand[mid]):
            hi = mid
        else:
            lo = mid + 1
    return cand[lo]


@njit
def _j1_batch_kernel(grid, A, B, N):
    out = np.empty(A.shape[0])
    for p in range(A.shape[0]):
        out[p] = _j1_kernel(grid, A[p], grid, B[p], N)
    return out


def j1_distance(a: StepPath, b: StepPath, N: float) -> float:
    """Windowed Skorokhod J1 distance between two step paths on [0, N].

    The value is one of finitely many candidates (time offsets between jump
    times, distances between states), so a bisection over the sorted
    candidates with an exact feasibility test returns the infimum itself.
    """
    _check_pair(a, b, N)
    s, A = a.skeleton(N)
    t, B = b.skeleton(N)
    return float(_j1_kernel(s, A, t, B, float(N)))


def j1_distance_batch(grid: np.ndarray, A: np.ndarray, B: np.ndarray, N: float) -> np.ndarray:
    """J1 distances between path pairs sharing the jump grid ``grid``.

    ``A`` and ``B`` have shape (n_paths, len(grid) + 1, d): the states before
    the first grid time and after each grid time.
    """
    grid = np.asarray(grid, dtype=float)
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    if A.shape != B.shape or A.shape[1] != grid.size + 1:
        raise DimensionMismatchError(f"Mismatched batch shapes {A.shape} and {B.shape}")
    inside = grid <= N
    keep = np.concatenate([[True], inside])
    return _j1_batch_kernel(grid[inside], A[:, keep], B[:, keep], float(N))


# --- w'_N modulus and sparse partitions -----------------------------------------


@dataclass(frozen=True, eq=False)
class SparsePartition:
    """Knots 0 = t_0 < ... < t_k = N with every cell but the last longer than ``zeta``."""

    knots: np.ndarray
    zeta: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).reshape(-1)
        if knots.size < 2 or knots[0] != 0.0:
            raise LabError("A partition needs at least the knots 0 and N")
        gaps = np.diff(knots)
        if np.any(gaps <= 0):
            raise LabError("Partition knots must be strictly increasing")
        if gaps.size > 1 and np.min(gaps[:-1]) <= self.zeta:
            raise LabError(f"Partition is not {self.zeta}-sparse: min interior gap {np.min(gaps[:-1])}")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "zeta", float(self.zeta))

    @property
    def N(self) -> float:
        return float(self.knots[-1])

    @property
    def n_cells(self) -> int:
        return self.knots.size - 1

    def cells(self) -> List[Tuple[float, float]]:
        return list(zip(self.knots[:-1].tolist(), self.knots[1:].tolist()))

    def oscillation(self, a: StepPath) -> float:
        """Max over cells [t_{i-1}, t_i) of the oscillation of ``a``."""
        worst = 0.0
        for lo, hi in self.cells():
            inside = a.times[(a.times > lo) & (a.times < hi)]
            pts = np.concatenate([[lo], inside])
            st = a.evaluate(pts)
            if st.shape[0] > 1:
                diff = np.linalg.norm(st[:, None, :] - st[None, :, :], axis=2)
                worst = max(worst, float(diff.max()))
        return worst


def _range_oscillations(states: np.ndarray) -> np.ndarray:
    """osc[s, j]: max pairwise distance among states s..j."""
    n = states.shape[0]
    dist = np.linalg.norm(states[:, None, :] - states[None, :, :], axis=2)
    osc = np.zeros((n, n))
    for s in range(n):
        for j in range(s + 1, n):
            osc[s, j] = max(osc[s, j - 1], float(dist[s:j, j].max()))
    return osc


def _partition_search(u: np.ndarray, osc: np.ndarray, N: float, zeta: float, theta: float):
    """Earliest-position DP over slots; returns the knot chain or None.

    Slot j is the interval [u_j, u_{j+1}) on which the path sits in state j
    (u_0 = 0, u_{J+1} = N). A knot is (position, open) where open means "just
    to the right of position". Only the earliest knot per slot is kept, since
    a later knot in the same slot is never better.
    """
    J = u.size - 1
    upper = np.append(u[1:], N)
    tol = 1e-15 * (1.0 + N)
    best: List[Optional[Tuple[float, bool]]] = [None] * (J + 1)
    parent: List[Optional[int]] = [None] * (J + 1)
    best[0] = (0.0, False)
    for s in range(J + 1):
        if best[s] is None:
            continue
        v, _ = best[s]
        if osc[s, J] <= theta + tol:
            chain = [s]
            while parent[chain[-1]] is not None:
                chain.append(parent[chain[-1]])
            return [best[c] for c in reversed(chain)]
        for j in range(s + 1, J + 1):
            # knot exactly at the jump u_j: the cell holds states s..j-1
            if osc[s, j - 1] <= theta + tol and u[j] > v + zeta and u[j] < N:
                cand = (float(u[j]), False)
                if best[j] is None or cand < best[j]:
                    best[j], parent[j] = cand, s
            # knot strictly inside (u_j, u_{j+1}): the cell holds states s..j
            if osc[s, j] <= theta + tol:
                pos = max(float(u[j]), v + zeta)
                if pos < upper[j] and pos < N:
                    cand = (pos, True)
                    if best[j] is None or cand < best[j]:
                        best[j], parent[j] = cand, s
    return None


def _wprime_setup(a: StepPath, N: float, zeta: float):
    if not zeta > 0:
        raise LabError(f"zeta must be positive, got {zeta}")
    if not N > zeta:
        raise WindowError(f"zeta ({zeta}) must be smaller than the window ({N})")
    if N > a.T:
        raise WindowError(f"Window {N} exceeds the path window {a.T}")
    n = int(np.searchsorted(a.times, N, side="left"))
    u = np.concatenate([[0.0], a.times[:n]])
    states = a.states[: n + 1]
    osc = _range_oscillations(states)
    cands = np.unique(np.concatenate([[0.0], osc[np.triu_indices(osc.shape[0], 1)]]))
    return u, osc, cands


def _wprime_threshold(u, osc, cands, N, zeta) -> int:
    lo, hi = 0, cands.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _partition_search(u, osc, N, zeta, cands[mid]) is not None:
            hi = mid
        else:
            lo = mid + 1
    return lo


def w_prime(a: StepPath, N: float, zeta: float) -> float:
    """The modulus w'_N(a, zeta), exact for step paths."""
    u, osc, cands = _wprime_setup(a, N, zeta)
    return float(cands[_wprime_threshold(u, osc, cands, N, zeta)])


def sparse_partition(a: StepPath, N: float, zeta: float, eps: float) -> SparsePartition:
    """A zeta-sparse partition of [0, N] whose oscillation is within ``eps`` of w'_N."""
    if not eps > 0:
        raise LabError(f"eps must be positive, got {eps}")
    u, osc, cands = _wprime_setup(a, N, zeta)
    theta = cands[_wprime_threshold(u, osc, cands, N, zeta)]
    chain = _partition_search(u, osc, N, zeta, theta)
    # open knots become position + (index * eta); eta leaves every strict
    # inequality of the chain intact
    slack = [np.inf]
    upper = np.append(u[1:], N)
    for prev, (pos, is_open) in zip(chain[:-1], chain[1:]):
        slack.append(pos - prev[0] - zeta if not is_open else np.inf)
        if is_open:
            idx = int(np.searchsorted(u, pos, side="right")) - 1
            slack.append(min(upper[idx], N) - pos)
    slack.append(N - chain[-1][0])
    finite = [x for x in slack if np.isfinite(x) and x > 0]
    eta = (min(finite) if finite else N) / (len(chain) + 2)
    knots = [pos + (i * eta if is_open else 0.0) for i, (pos, is_open) in enumerate(chain)]
    knots.append(float(N))
    part = SparsePartition(np.array(knots), zeta)
    logger.debug("sparse partition with %d cells, oscillation %.6g", part.n_cells, theta)
    return part


# --- uniform boundedness ---------------------------------------------------------


@dataclass
class UniformBoundReport:
    finite_limits: bool
    local_bounds: bool
    tail_bound: bool
    local_bound: float
    bound: Optional[float]
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.finite_limits and self.local_bounds and self.tail_bound


def check_uniform_bounded(
    seq: Sequence[Path],
    terminal_values: Optional[Sequence] = None,
    tail_bound: Optional[float] = None,
) -> UniformBoundReport:
    """Check the three conditions of uniform boundedness on a finite family.

    (1) every path has a finite limit at infinity (its terminal value),
    (2) the paths are bounded on their windows, (3) the declared limsup of the
    tail is finite. An undeclared tail (``None``) fails (3). On success the
    implied bound is the largest of the three.
    """
    if seq and len({p.d for p in seq}) > 1:
        raise DimensionMismatchError("All paths must share one dimension")
    if terminal_values is None:
        terminal_values = [p.evaluate(p.T) for p in seq]
    term = [np.asarray(v, dtype=float) for v in terminal_values]
    failures: List[str] = []
    finite_limits = all(np.all(np.isfinite(v)) for v in term)
    if not finite_limits:
        failures.append("condition (1): a terminal value is not finite")
    local = [p.sup_norm() for p in seq]
    local_ok = all(np.isfinite(x) for x in local)
    if not local_ok:
        failures.append("condition (2): a path is unbounded on its window")
    if tail_bound is None:
        tail_ok = False
        failures.append("condition (3): no tail limsup declared")
    else:
        tail_ok = bool(np.isfinite(tail_bound))
        if not tail_ok:
            failures.append("condition (3): declared tail limsup is infinite")
    local_bound = max(local) if local else 0.0
    bound = None
    if finite_limits and local_ok and tail_ok:
        term_bound = max((float(np.linalg.norm(v)) for v in term), default=0.0)
        bound = max(local_bound, term_bound, float(tail_bound))
    return UniformBoundReport(finite_limits, local_ok, tail_ok, float(local_bound), bound, failures)


# --- L2 step approximation -------------------------------------------------------

Target = Union[StepPath, LinearPath, Callable[[np.ndarray], np.ndarray]]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _eval_target(target: Target, t: np.ndarray) -> np.ndarray:
    if isinstance(target, (StepPath, LinearPath)):
        return target.evaluate(t)
    out = np.asarray(target(t), dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    return out


def _quad_nodes(lo: float, hi: float, extra: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [lo, hi] split at ``extra`` breakpoints."""
    edges = np.unique(np.concatenate([[lo, hi], extra[(extra > lo) & (extra < hi)]]))
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        nodes.append(a + half * (_GL_NODES + 1.0))
        weights.append(half * _GL_WEIGHTS)
    return np.concatenate(nodes), np.concatenate(weights)


def _dyadic(x: np.ndarray) -> np.ndarray:
    scale = float(2 ** _DYADIC_BITS)
    return np.round(x * scale) / scale


class _MeasureView:
    """Atoms plus density pieces of a FiniteMeasure, restricted to [0, W)."""

    def __init__(self, mu: "FiniteMeasure"):
        self.atom_loc = mu.atom_locations
        self.atom_mass = mu.atom_masses
        kt, kf = mu.knots, mu.cdf_values
        self.piece_lo = kt[:-1]
        self.piece_hi = kt[1:]
        dt = np.diff(kt)
        self.density = np.divide(np.diff(kf), dt, out=np.zeros_like(dt), where=dt > 0)
        self.support_end = max(
            float(self.atom_loc.max()) if self.atom_loc.size else 0.0,
            float(kt[-1]) if kt.size else 0.0,
        )


def _cell_moments(target: Target, view: _MeasureView, edges: np.ndarray, d: int, trunc: float):
    """Per-cell mass, integral of f and quadrature handles, with f truncated at ``trunc``."""
    n_cells = edges.size - 1
    mass = np.zeros(n_cells)
    first = np.zeros((n_cells, d))
    quad = []
    extra = np.empty(0)
    if isinstance(target, StepPath):
        extra = target.times
    elif isinstance(target, LinearPath):
        extra = target.knots

    def trunc_f(vals):
        norms = np.linalg.norm(vals, axis=1)
        return np.where((norms <= trunc)[:, None], vals, 0.0)

    if view.atom_loc.size:
        cell = np.clip(np.searchsorted(edges, view.atom_loc, side="right") - 1, 0, n_cells - 1)
        fv = _eval_target(target, view.atom_loc)
        if not np.all(np.isfinite(fv)):
            raise LabError("Target is not finite at an atom of the measure")
        fv = trunc_f(fv)
        np.add.at(mass, cell, view.atom_mass)
        np.add.at(first, cell, view.atom_mass[:, None] * fv)
        quad.append((cell, view.atom_mass, view.atom_loc))
    for lo, hi, rho in zip(view.piece_lo, view.piece_hi, view.density):
        if rho <= 0:
            continue
        nodes, w = _quad_nodes(lo, hi, np.concatenate([edges, extra]))
        w = w * rho
        cell = np.clip(np.searchsorted(edges, nodes, side="right") - 1, 0, n_cells - 1)
        fv = trunc_f(_eval_target(target, nodes))
        np.add.at(mass, cell, w)
        np.add.at(first, cell, w[:, None] * fv)
        quad.append((cell, w, nodes))
    return mass, first, quad


def _l2_error(target: Target, approx: StepPath, quad) -> float:
    err = 0.0
    for _, w, nodes in quad:
        diff = _eval_target(target, nodes) - approx.evaluate(nodes)
        err += float(np.sum(w * np.sum(diff * diff, axis=1)))
    return err


def l2_step_approximation(target: Target, mu: "FiniteMeasure", eps: float, max_level: int = 24) -> StepPath:
    """Step path with dyadic knots and values within ``eps`` of ``target`` in L2(mu).

    First the target is truncated at a level n (doubled until the truncation
    error is below eps^2 / 4), then projected on dyadic cells of width
    W / 2^L (L increased until the total error is below eps^2). A target that
    is already a step path is returned unchanged.
    """
    if not eps > 0:
        raise LabError(f"eps must be positive, got {eps}")
    if isinstance(target, StepPath):
        return target
    view = _MeasureView(mu)
    S = view.support_end
    W = 2.0 ** (math.floor(math.log2(S)) + 1) if S > 0 else 1.0
    d = _eval_target(target, np.array([0.0])).shape[1]

    full_edges = np.array([0.0, W])
    _, _, quad = _cell_moments(target, view, full_edges, d, np.inf)
    sup = 0.0
    for _, _, nodes in quad:
        vals = _eval_target(target, nodes)
        if not np.all(np.isfinite(vals)):
            raise LabError("Target is not finite on the support of the measure")
        sup = max(sup, float(np.linalg.norm(vals, axis=1).max()))
    level = 1.0
    while level < sup:
        tail = 0.0
        for _, w, nodes in quad:
            norms = np.linalg.norm(_eval_target(target, nodes), axis=1)
            tail += float(np.sum(w * np.where(norms > level, norms ** 2, 0.0)))
        if tail < eps ** 2 / 4:
            break
        level *= 2.0
    trunc = np.inf if level >= sup else level

    for L in range(max_level + 1):
        edges = np.linspace(0.0, W, 2 ** L + 1)
        mass, first, quad = _cell_moments(target, view, edges, d, trunc)
        fallback = _eval_target(target, edges[:-1])
        fallback = np.where(np.isfinite(fallback), fallback, 0.0)
        vals = np.where((mass > 0)[:, None], first / np.where(mass > 0, mass, 1.0)[:, None], fallback)
        vals = _dyadic(vals)
        approx = StepPath(vals[0], edges[1:-1], vals[1:], W)
        err = _l2_error(target, approx, quad)
        logger.debug("l2 step approximation: level %d, error^2 %.3e", L, err)
        if err < eps ** 2:
            return approx
    raise LabError(f"No dyadic step approximation within eps={eps} up to level {max_level}")
