#!/usr/bin/env python3
"""
references.py
-------------
Reference problems with closed-form limits, evaluated on the k-th driver's own
paths.

Catalog (generator f = λy throughout, so both the discrete Picard iterates and
the limit have closed forms):

- ``martingale-g``   f = 0, ξ = g(X∘_T + X♮_T), payoffs square / call / identity / zero
- ``linear-lambda``  f = λy, same terminal values (alias ``linear-λ``)
- ``ode-limit``      deterministic drivers, ξ constant: Y = e^{λ(T-t)} ξ
- ``jump-linear``    f = λy, ξ = a·X♮_T + b·X∘_T
- ``zero``           ξ = 0, f = 0

The limit value u(τ, x) is the heat semigroup applied to g (closed form for
catalog payoffs, Gauss-Hermite quadrature otherwise), mixed over a Poisson
series (truncated at relative mass 1e-12) when the payoff sees jumps.

The discrete iterates for f = λy are Y^(p)_i = c^(p)_{k-i}·m_i with
m_i = E[ξ | F_i]; for the scaled walk m_i is a binomial-pmf convolution of the
terminal values. The multipliers follow

    Y_left:  c^(p+1)_n = 1 + λh Σ_{r=1..n} c^(p)_r,    fixed point (1 - λh)^{-n}
    Y_right: c^(p+1)_n = 1 + λh Σ_{r=0..n-1} c^(p)_r,  fixed point (1 + λh)^{n}

and Z^(p) on step i carries c^(p)_{k-i} (left) or c^(p)_{k-i+1} (right).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import roots_hermitenorm
from scipy.stats import binom, norm, poisson

from .drivers import (
    Generator,
    RandomWalkDriver,
    StandardData,
    WalkSample,
    build_deterministic_data,
    make_generator,
)
from .errors import LabError, UnknownProblemError
from .solver import (
    ANGLE_BRACKETS,
    SQUARE_BRACKETS,
    AdaptedProcess,
    PicardSolution,
    cumulate,
    stochastic_integral_increments,
)

logger = logging.getLogger(__name__)

POISSON_REL_TOL = 1e-12
_GH_NODES = 96

PROBLEMS = ("martingale-g", "linear-lambda", "ode-limit", "jump-linear", "zero")
_ALIASES = {"linear-λ": "linear-lambda", "linear-lam": "linear-lambda"}


# --- payoffs and semigroups ----------------------------------------------------------


def heat_semigroup(g: Callable[[np.ndarray], np.ndarray], x, var: float, nodes: int = _GH_NODES) -> np.ndarray:
    """E g(x + sqrt(var) ξ), ξ standard normal, by Gauss-Hermite quadrature."""
    x = np.asarray(x, dtype=float)
    if var <= 0:
        return np.asarray(g(x), dtype=float)
    z, w = roots_hermitenorm(nodes)
    w = w / np.sqrt(2.0 * np.pi)
    vals = g(x[..., None] + np.sqrt(var) * z)
    return (vals * w).sum(axis=-1)


def heat_gradient(g: Callable[[np.ndarray], np.ndarray], x, var: float, nodes: int = _GH_NODES) -> np.ndarray:
    """d/dx of the heat semigroup: E[g(x + sqrt(var) ξ) ξ] / sqrt(var)."""
    x = np.asarray(x, dtype=float)
    if var <= 0:
        raise LabError("The gradient of the heat semigroup needs a positive variance")
    z, w = roots_hermitenorm(nodes)
    w = w / np.sqrt(2.0 * np.pi)
    vals = g(x[..., None] + np.sqrt(var) * z)
    return (vals * z * w).sum(axis=-1) / np.sqrt(var)


@dataclass(frozen=True)
class Payoff:
    """Terminal map of the walk value; catalog names have closed-form heat semigroups."""

    name: str
    strike: float = 0.0
    custom: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.custom is None and self.name not in ("square", "call", "identity", "zero"):
            raise UnknownProblemError(f"Unknown payoff {self.name!r}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.custom is not None:
            return np.asarray(self.custom(x), dtype=float)
        if self.name == "square":
            return x * x
        if self.name == "call":
            return np.maximum(x - self.strike, 0.0)
        if self.name == "identity":
            return x.copy()
        return np.zeros_like(x)

    def heat(self, x, var: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.custom is not None:
            return heat_semigroup(self, x, var)
        if self.name == "square":
            return x * x + var
        if self.name == "call":
            if var <= 0:
                return np.maximum(x - self.strike, 0.0)
            s = np.sqrt(var)
            d = (x - self.strike) / s
            return (x - self.strike) * norm.cdf(d) + s * norm.pdf(d)
        if self.name == "identity":
            return x.copy()
        return np.zeros_like(x)

    def heat_dx(self, x, var: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.custom is not None:
            return heat_gradient(self, x, var)
        if self.name == "square":
            return 2.0 * x
        if self.name == "call":
            return norm.cdf((x - self.strike) / np.sqrt(var)) if var > 0 else (x > self.strike).astype(float)
        if self.name == "identity":
            return np.ones_like(x)
        return np.zeros_like(x)


def poisson_terms(mean: float, rel_tol: float = POISSON_REL_TOL) -> Tuple[np.ndarray, np.ndarray]:
    """Counts and pmf of a Poisson law, cut where the remaining mass drops below rel_tol."""
    if mean <= 0:
        return np.zeros(1, dtype=np.int64), np.ones(1)
    top = int(poisson.isf(rel_tol, mean)) + 1
    n = np.arange(top + 1)
    return n, poisson.pmf(n, mean)


def picard_multipliers(lam: float, h: float, n: int, p: Optional[int], convention: str = "Y_left") -> np.ndarray:
    """c^(p)_r for r = 0..n; ``p=None`` gives the fixed point."""
    r = np.arange(n + 1, dtype=float)
    if p is None:
        if convention == "Y_left":
            return (1.0 - lam * h) ** (-r)
        return (1.0 + lam * h) ** r
    c = np.zeros(n + 1)
    for _ in range(p):
        if convention == "Y_left":
            c = 1.0 + lam * h * np.concatenate([[0.0], np.cumsum(c[1:])])
        else:
            c = 1.0 + lam * h * np.concatenate([[0.0], np.cumsum(c[:-1])])
    return c


def _multipliers(lam, h, k, p, convention):
    c = picard_multipliers(lam, h, k, p, convention)
    i = np.arange(k + 1)
    cy = c[k - i]
    steps = np.arange(1, k + 1)
    if convention == "Y_left":
        cz = c[k - steps]
    else:
        # c^(p)_{k-i+1} needs one more entry
        c_ext = picard_multipliers(lam, h, k + 1, p, convention)
        cz = c_ext[k - steps + 1]
    return cy, cz


# --- path bundles ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Scalar driver paths on the grid ``times`` with probability ``weights``.

    ``xc``/``xj`` (P, k+1) cumulative X∘ and X♮, ``marks`` (P, k) mark index or
    -1, ``ups`` (P, k+1) up-move counts (walks only), ``nu`` (J,) per-step
    compensator atoms, ``mark_values`` (J,).
    """

    times: np.ndarray
    xc: np.ndarray
    xj: np.ndarray
    marks: np.ndarray
    weights: np.ndarray
    nu: np.ndarray
    mark_values: np.ndarray
    sigma: float
    ups: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.times.size - 1

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_paths(self) -> int:
        return self.xc.shape[0]

    @property
    def jump_variance(self) -> float:
        if self.nu.size == 0:
            return 0.0
        return float(self.nu @ self.mark_values ** 2 - (self.nu @ self.mark_values) ** 2)

    def mean(self, values: np.ndarray) -> float:
        v = np.asarray(values, dtype=float)
        v = v.reshape(v.shape[0], -1).sum(axis=1)
        return float((self.weights * v).sum())

    def subset(self, idx: np.ndarray) -> "PathBundle":
        return PathBundle(
            self.times,
            self.xc[idx],
            self.xj[idx],
            self.marks[idx],
            np.full(len(idx), 1.0 / len(idx)),
            self.nu,
            self.mark_values,
            self.sigma,
            None if self.ups is None else self.ups[idx],
        )

    @classmethod
    def from_tree(cls, data: StandardData, sigma: float) -> "PathBundle":
        tree = data.tree
        anc = tree.leaf_ancestors
        xc = np.stack([data.x_cont[i][anc[:, i], 0] for i in range(data.n + 1)], axis=1)
        xj = np.stack([data.x_jump[i][anc[:, i], 0] for i in range(data.n + 1)], axis=1)
        marks = np.stack([tree.mark[i][anc[:, i]] for i in range(1, data.n + 1)], axis=1) if data.n else np.zeros((tree.n_leaves, 0))
        nu = data.nu[1][0] if data.J else np.zeros(0)
        mark_values = data.marks[:, 0] if data.J else np.zeros(0)
        return cls(tree.times, xc, xj, marks, tree.leaf_probabilities, nu, mark_values, sigma)

    @classmethod
    def from_sample(cls, driver: RandomWalkDriver, sample: WalkSample) -> "PathBundle":
        marks, pj = driver.mark_setup
        n = sample.n_paths
        return cls(
            driver.times,
            sample.x_cont,
            sample.x_jump,
            sample.marks,
            np.full(n, 1.0 / n),
            pj,
            marks[:, 0] if marks.shape[0] else np.zeros(0),
            driver.sigma,
            sample.up_counts,
        )


@dataclass
class PathRecord:
    """Y, I = Z·X∘ + U⋆μ̃ and N along each path, plus terminal bracket values."""

    Y: np.ndarray
    I: np.ndarray
    N: np.ndarray
    square: Dict[str, np.ndarray]
    angle: Dict[str, np.ndarray]

    def triple(self) -> np.ndarray:
        """(P, k+1, 3) states for the J1 comparison."""
        return np.stack([self.Y, self.I, self.N], axis=2)


def _cum(increments: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros((increments.shape[0], 1)), np.cumsum(increments, axis=1)], axis=1)


# --- problems ------------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceProblem:
    name: str
    T: float = 1.0
    lam: float = 0.0
    payoff: Payoff = field(default_factory=lambda: Payoff("square"))
    xi: float = 1.0
    sigma: float = 1.0
    jump_intensity: float = 0.0
    marks: Tuple[float, ...] = (1.0,)
    mark_weights: Optional[Tuple[float, ...]] = None
    a: float = 1.0
    b: float = 0.0
    deterministic: bool = False

    @property
    def generator(self) -> Generator:
        if self.lam == 0:
            return make_generator("zero")
        return make_generator("linear-y", lam=self.lam)

    @property
    def has_jumps(self) -> bool:
        return self.jump_intensity > 0 and not self.deterministic

    def driver(self, k: int) -> RandomWalkDriver:
        return RandomWalkDriver(
            k, self.T, self.sigma, self.jump_intensity if self.has_jumps else 0.0, tuple(self.marks), self.mark_weights
        )

    def terminal(self, xc: np.ndarray, xj: np.ndarray) -> np.ndarray:
        xc = np.asarray(xc, dtype=float)
        xj = np.asarray(xj, dtype=float)
        if self.name == "zero":
            return np.zeros_like(xc)
        if self.deterministic:
            return np.full_like(xc, self.xi)
        if self.name == "jump-linear":
            return self.a * xj + self.b * xc
        return self.payoff(xc + xj)

    def build_data(self, k: int) -> StandardData:
        if self.deterministic:
            return build_deterministic_data(k, self.T, self.generator, 0.0 if self.name == "zero" else self.xi)
        return self.driver(k).build_data(self.generator, lambda xc, xj: self.terminal(xc[:, 0], xj[:, 0]))

    # --- limit -------------------------------------------------------------

    def _poisson_mix(self, fn, s: np.ndarray, tau: float) -> np.ndarray:
        if len(self.marks) != 1:
            raise LabError("The Poisson series for a nonlinear payoff supports a single jump mark")
        x1 = float(self.marks[0])
        lam_j = self.jump_intensity
        counts, pmf = poisson_terms(lam_j * tau)
        shifts = x1 * (counts - lam_j * tau)
        return sum(w * fn(s + d) for w, d in zip(pmf, shifts))

    def value(self, tau: float, xc: np.ndarray, xj: np.ndarray) -> np.ndarray:
        """u(τ, x) = E[ξ | X∘ = xc, X♮ = xj, time to maturity τ]."""
        if self.name == "zero":
            return np.zeros_like(np.asarray(xc, dtype=float))
        if self.deterministic:
            return np.full_like(np.asarray(xc, dtype=float), self.xi)
        if self.name == "jump-linear":
            return self.a * xj + self.b * xc
        var = self.sigma ** 2 * tau
        s = np.asarray(xc, dtype=float) + np.asarray(xj, dtype=float)
        if self.has_jumps:
            return self._poisson_mix(lambda v: self.payoff.heat(v, var), s, tau)
        return self.payoff.heat(s, var)

    def gradient(self, tau: float, xc: np.ndarray, xj: np.ndarray) -> np.ndarray:
        xc = np.asarray(xc, dtype=float)
        if self.name == "zero" or self.deterministic:
            return np.zeros_like(xc)
        if self.name == "jump-linear":
            return np.full_like(xc, self.b)
        var = self.sigma ** 2 * tau
        s = xc + np.asarray(xj, dtype=float)
        if self.has_jumps:
            return self._poisson_mix(lambda v: self.payoff.heat_dx(v, var), s, tau)
        return self.payoff.heat_dx(s, var)

    def jump_difference(self, tau: float, xc: np.ndarray, xj: np.ndarray) -> np.ndarray:
        """u(τ, x + x_j) − u(τ, x) per mark, shape (..., J)."""
        xc = np.asarray(xc, dtype=float)
        if not self.has_jumps:
            return np.zeros(xc.shape + (0,))
        marks = np.asarray(self.marks, dtype=float)
        if self.name == "zero":
            return np.zeros(xc.shape + (marks.size,))
        if self.name == "jump-linear":
            return np.broadcast_to(self.a * marks, xc.shape + (marks.size,)).copy()
        base = self.value(tau, xc, xj)
        return np.stack([self.value(tau, xc, np.asarray(xj) + x) - base for x in marks], axis=-1)

    def limit_y(self, t: float, xc, xj) -> np.ndarray:
        return np.exp(self.lam * (self.T - t)) * self.value(self.T - t, xc, xj)

    def limit_z(self, t: float, xc, xj) -> np.ndarray:
        return np.exp(self.lam * (self.T - t)) * self.gradient(self.T - t, xc, xj)

    def limit_u(self, t: float, xc, xj) -> np.ndarray:
        return np.exp(self.lam * (self.T - t)) * self.jump_difference(self.T - t, xc, xj)

    def limit_record(self, bundle: PathBundle) -> PathRecord:
        """Limit solution on the bundle's paths; brackets as Riemann sums on the grid."""
        k, h = bundle.k, bundle.h
        t = bundle.times
        P = bundle.n_paths
        sig2 = 0.0 if self.deterministic else self.sigma ** 2
        Y = np.stack([self.limit_y(t[i], bundle.xc[:, i], bundle.xj[:, i]) for i in range(k + 1)], axis=1)
        Z = np.stack([self.limit_z(t[i - 1], bundle.xc[:, i - 1], bundle.xj[:, i - 1]) for i in range(1, k + 1)], axis=1)
        J = bundle.nu.size
        if J:
            U = np.stack([self.limit_u(t[i - 1], bundle.xc[:, i - 1], bundle.xj[:, i - 1]) for i in range(1, k + 1)], axis=1)
        else:
            U = np.zeros((P, k, 0))
        dxc = np.diff(bundle.xc, axis=1)
        jumped = bundle.marks >= 0
        hit = np.zeros((P, k))
        hit_mark = np.zeros((P, k))
        if J:
            feats = (bundle.marks[:, :, None] == np.arange(J)[None, None, :]).astype(float) - bundle.nu
            jump_int = (U * feats).sum(axis=2)
            safe = np.maximum(bundle.marks, 0)
            hit = np.where(jumped, np.take_along_axis(U, safe[:, :, None], axis=2)[:, :, 0], 0.0)
            hit_mark = np.where(jumped, bundle.mark_values[safe], 0.0)
            comp_u2 = (bundle.nu * U ** 2).sum(axis=2)
            comp_ux = (bundle.nu * U * bundle.mark_values).sum(axis=2)
        else:
            jump_int = np.zeros((P, k))
            comp_u2 = np.zeros((P, k))
            comp_ux = np.zeros((P, k))
        dI = Z * dxc + jump_int
        cont_qv = sig2 * Z ** 2 * h
        zero = np.zeros((P, 1))
        square = {
            "[Y]": (cont_qv + hit ** 2).sum(axis=1)[:, None],
            "[Z.Xc+U*mu]": (cont_qv + hit ** 2).sum(axis=1)[:, None],
            "[N]": zero,
            "[Y,Xc]": (sig2 * Z * h).sum(axis=1)[:, None],
            "[Y,Xj]": (hit * hit_mark).sum(axis=1)[:, None],
            "[Y,N]": zero,
        }
        angle = {
            "<Y>": (cont_qv + comp_u2).sum(axis=1)[:, None],
            "<Z.Xc>": cont_qv.sum(axis=1)[:, None],
            "<U*mu>": comp_u2.sum(axis=1)[:, None],
            "<N>": zero,
            "<Y,Xc>": (sig2 * Z * h).sum(axis=1)[:, None],
            "<Y,Xj>": comp_ux.sum(axis=1)[:, None],
            "<Y,N>": zero,
        }
        return PathRecord(Y, _cum(dI), np.zeros_like(Y), square, angle)

    # --- discrete closed forms ------------------------------------------------

    @property
    def has_closed_form(self) -> bool:
        return self.deterministic or self.name in ("zero", "jump-linear") or not self.has_jumps

    def _martingale_tables(self, k: int) -> List[np.ndarray]:
        """m_i over up-move counts u = 0..i for the scaled walk."""
        s = self.sigma * np.sqrt(self.T / k)
        G = self.terminal(s * (2.0 * np.arange(k + 1) - k), np.zeros(k + 1))
        tables = []
        for i in range(k + 1):
            pmf = binom.pmf(np.arange(k - i + 1), k - i, 0.5)
            tables.append(np.convolve(G, pmf[::-1], mode="valid"))
        return tables

    def _martingale_paths(self, bundle: PathBundle) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """m_i along paths, Zm_i (step i) and the jump loading a on ΔX♮."""
        k = bundle.k
        P = bundle.n_paths
        if self.name == "zero":
            return np.zeros((P, k + 1)), np.zeros((P, k)), 0.0
        if self.deterministic:
            return np.full((P, k + 1), self.xi), np.zeros((P, k)), 0.0
        if self.name == "jump-linear":
            return self.a * bundle.xj + self.b * bundle.xc, np.full((P, k), self.b), self.a
        if not self.has_closed_form or bundle.ups is None:
            raise LabError(f"No closed-form discrete iterates for {self.name} on these paths")
        tables = self._martingale_tables(k)
        ups = bundle.ups
        m = np.stack([tables[i][ups[:, i]] for i in range(k + 1)], axis=1)
        s = self.sigma * np.sqrt(bundle.h)
        zm = np.stack(
            [(tables[i][ups[:, i - 1] + 1] - tables[i][ups[:, i - 1]]) / (2.0 * s) for i in range(1, k + 1)], axis=1
        )
        return m, zm, 0.0

    def y0_discrete(self, k: int, convention: str = "Y_left") -> float:
        """Fixed-point Y_0 of the k-step scheme, exact."""
        if self.name == "zero":
            return 0.0
        if self.deterministic or self.name == "jump-linear":
            m0 = self.xi if self.deterministic else 0.0
        else:
            if self.has_jumps:
                raise LabError(f"No closed-form discrete iterates for {self.name} with jumps")
            m0 = float(self._martingale_tables(k)[0][0])
        c = picard_multipliers(self.lam, self.T / k, k, None, convention)
        return float(c[k] * m0)

    def discrete_record(self, bundle: PathBundle, p: Optional[int], convention: str = "Y_left") -> PathRecord:
        """The p-th Picard iterate (``None``: fixed point) along the bundle's paths."""
        k, h = bundle.k, bundle.h
        m, zm, a = self._martingale_paths(bundle)
        cy, cz = _multipliers(self.lam, h, k, p, convention)
        sig2 = 0.0 if self.deterministic else self.sigma ** 2
        var_j = bundle.jump_variance if a else 0.0
        Y = cy[None, :] * m
        dxc = np.diff(bundle.xc, axis=1)
        dxj = np.diff(bundle.xj, axis=1)
        dY = np.diff(Y, axis=1)
        dI = cz[None, :] * (zm * dxc + a * dxj)
        em2 = sig2 * h * zm ** 2 + a * a * var_j
        step_cy = cy[1:][None, :]
        drift = (cy[1:] - cy[:-1])[None, :] * m[:, :-1]
        P = bundle.n_paths
        zero = np.zeros((P, 1))
        square = {
            "[Y]": (dY ** 2).sum(axis=1)[:, None],
            "[Z.Xc+U*mu]": (dI ** 2).sum(axis=1)[:, None],
            "[N]": zero,
            "[Y,Xc]": (dY * dxc).sum(axis=1)[:, None],
            "[Y,Xj]": (dY * dxj).sum(axis=1)[:, None],
            "[Y,N]": zero,
        }
        angle = {
            "<Y>": (step_cy ** 2 * em2 + drift ** 2).sum(axis=1)[:, None],
            "<Z.Xc>": (cz[None, :] ** 2 * zm ** 2 * sig2 * h).sum(axis=1)[:, None],
            "<U*mu>": np.full((P, 1), float((cz ** 2).sum() * a * a * var_j)),
            "<N>": zero,
            "<Y,Xc>": (step_cy * zm * sig2 * h).sum(axis=1)[:, None],
            "<Y,Xj>": np.full((P, 1), float(cy[1:].sum() * a * var_j)),
            "<Y,N>": zero,
        }
        return PathRecord(Y, _cum(dI), np.zeros_like(Y), square, angle)

    def closed_form_star_gap(
        self, bundle: PathBundle, p: int, beta: float, convention: str = "Y_left", to_fixed: bool = True
    ) -> float:
        """Squared star-norm distance between the p-th iterate and the fixed point
        (or zero, with ``to_fixed=False``), by Monte Carlo over the bundle.

        Weights are e^{β(A_t - A_T)}, the normalization ``solve`` uses.
        """
        k, h = bundle.k, bundle.h
        m, zm, a = self._martingale_paths(bundle)
        cy, cz = _multipliers(self.lam, h, k, p, convention)
        if to_fixed:
            fy, fz = _multipliers(self.lam, h, k, None, convention)
        else:
            fy, fz = np.zeros_like(cy), np.zeros_like(cz)
        alpha2 = self.lam ** 2
        w = np.exp(beta * alpha2 * (bundle.times - bundle.times[-1]))
        sig2 = 0.0 if self.deterministic else self.sigma ** 2
        var_j = bundle.jump_variance if a else 0.0
        dy = (cy - fy)[None, :] * m
        y_part = bundle.mean((w[None, :] * dy ** 2).max(axis=1))
        dz = (cz - fz)
        z_part = bundle.mean((w[1:][None, :] * (dz[None, :] * zm) ** 2 * sig2 * h).sum(axis=1))
        u_part = float((w[1:] * dz ** 2).sum() * a * a * var_j)
        return y_part + z_part + u_part


def reference_problem(problem: str, **params) -> ReferenceProblem:
    """Catalog lookup; ``problem`` may use the alias ``linear-λ``."""
    name = _ALIASES.get(problem, problem)
    if name not in PROBLEMS:
        raise UnknownProblemError(f"Unknown problem {problem!r}; known: {list(PROBLEMS)}")
    payoff = params.pop("payoff", "square")
    strike = params.pop("strike", 0.0)
    if not isinstance(payoff, Payoff):
        payoff = Payoff(payoff, strike) if isinstance(payoff, str) else Payoff("custom", strike, payoff)
    if name == "martingale-g":
        params["lam"] = 0.0
    if name == "ode-limit":
        params["deterministic"] = True
    if name == "jump-linear" and params.get("jump_intensity", 0.0) <= 0 and params.get("b", 0.0) == 0:
        raise LabError("jump-linear needs a positive jump intensity or a nonzero diffusion loading")
    return ReferenceProblem(name, payoff=payoff, **params)


def reference_solution(problem: ReferenceProblem, data: StandardData) -> PicardSolution:
    """The limit (Y, Z, U) evaluated at every node of ``data``'s tree; N = 0.

    Z and U on step i are read at the node where the step starts.
    """
    tree = data.tree
    t = tree.times
    Y = [
        problem.limit_y(t[i], data.x_cont[i][:, 0], data.x_jump[i][:, 0])[:, None]
        for i in range(data.n + 1)
    ]
    Z, U = [], []
    for i in range(1, data.n + 1):
        xc, xj = data.x_cont[i - 1][:, 0], data.x_jump[i - 1][:, 0]
        Z.append(problem.limit_z(t[i - 1], xc, xj)[:, None, None])
        if data.J:
            U.append(problem.limit_u(t[i - 1], xc, xj)[:, None, :])
        else:
            U.append(np.zeros((xc.size, 1, 0)))
    zeros = [np.zeros_like(y) for y in Y]
    return PicardSolution(AdaptedProcess(Y), Z, U, zeros, AdaptedProcess(zeros))


def record_from_solution(S: PicardSolution, data: StandardData, bracket_set) -> PathRecord:
    """Leaf-path view of a tree solution, in the layout of ``PathRecord``."""
    inc = [np.zeros((1, data.ell))] + [stochastic_integral_increments(data, S, i) for i in range(1, data.n + 1)]
    I = cumulate(data, inc)
    return PathRecord(
        S.Y.leaf_paths(data)[:, :, 0],
        I.leaf_paths(data)[:, :, 0],
        S.N.leaf_paths(data)[:, :, 0],
        {name: bracket_set.terminal(name) for name in SQUARE_BRACKETS},
        {name: bracket_set.terminal(name) for name in ANGLE_BRACKETS},
    )
