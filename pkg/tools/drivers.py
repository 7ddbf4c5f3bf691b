#!/usr/bin/env python3
"""
drivers.py
----------
Discrete filtrations as finite scenario trees, the driver families built on
them, the generator catalog, and assembly/validation of standard data.

WHAT IT DOES
- ``ScenarioTree``: level arrays (parent, transition probability, continuous
  increment, jump mark) with contiguous children, so a conditional expectation
  is one ``np.add.reduceat`` per level.
- ``build_random_walk_data``: scaled random walk X∘ (±σ√h per coordinate) times
  an independent compensated Bernoulli jump walk X♮ with a finite mark space.
- ``build_deterministic_data``: the constantly trivial filtration.
- ``build_random_tree_data``: randomized product trees for property checks.
- Generator catalog with stochastic-Lipschitz data (r, θ∘, θ♮) computed from
  the instance's predictable characteristics; α = max{√r, θ∘, θ♮}, A = ∫α² dC.
- ``RandomWalkDriver``: the same walk as a path sampler for Monte Carlo runs,
  seeded per (k, block) so a path never depends on the worker layout.

Conventions: at most one jump mark per step, jumps and diffusion branches form
a product at every node, the compensator atom of mark j at a node is the
conditional probability of that mark, and ΔX♮ = x_mark·1{jump} − Σ_j x_j ν_j.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .constants import QUARTER, m_star
from .errors import BracketError, DimensionMismatchError, GeneratorError, LabError, ProbabilityError, UnknownProblemError
from .paths import StepPath

logger = logging.getLogger(__name__)

_PROB_TOL = 1e-12

TerminalMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


# --- scenario trees ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Levels 0..n of a finite tree; level 0 is the root.

    For level i >= 1: ``parent[i]`` (nondecreasing, so children of a node are
    contiguous), ``prob[i]`` the transition probability into each node,
    ``dx[i]`` the continuous increment on that edge, ``mark[i]`` the jump mark
    index (-1 for no jump).
    """

    times: np.ndarray
    parent: List[np.ndarray]
    prob: List[np.ndarray]
    dx: List[np.ndarray]
    mark: List[np.ndarray]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        n = times.size - 1
        if n < 1 or np.any(np.diff(times) <= 0):
            raise LabError("Tree times must be strictly increasing with at least one step")
        if not (len(self.parent) == len(self.prob) == len(self.dx) == len(self.mark) == n + 1):
            raise DimensionMismatchError("One parent/prob/dx/mark array per level is required")
        m = np.atleast_2d(np.asarray(self.dx[1], dtype=float)).shape[1]
        parent = [np.array([-1])]
        prob = [np.ones(1)]
        dx = [np.zeros((1, m))]
        mark = [np.array([-1])]
        size = 1
        for i in range(1, n + 1):
            par = np.asarray(self.parent[i], dtype=np.int64)
            pr = np.asarray(self.prob[i], dtype=float)
            d = np.asarray(self.dx[i], dtype=float).reshape(par.size, m)
            mk = np.asarray(self.mark[i], dtype=np.int64)
            if pr.size != par.size or mk.size != par.size:
                raise DimensionMismatchError(f"Level {i}: array lengths differ")
            if np.any(np.diff(par) < 0) or par.min() < 0 or par.max() >= size:
                raise LabError(f"Level {i}: parents must be sorted indices into level {i - 1}")
            counts = np.bincount(par, minlength=size)
            if np.any(counts == 0):
                raise LabError(f"Level {i}: every node of level {i - 1} needs a child (all leaves sit at level {n})")
            if np.any(pr <= 0):
                raise ProbabilityError(f"Level {i}: transition probabilities must be positive")
            sums = np.bincount(par, weights=pr, minlength=size)
            if np.max(np.abs(sums - 1.0)) > 1e-10:
                raise ProbabilityError(f"Level {i}: transition probabilities do not sum to 1 at every node")
            parent.append(par)
            prob.append(pr)
            dx.append(d)
            mark.append(mk)
            size = par.size
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "mark", mark)

    @property
    def depth(self) -> int:
        return self.times.size - 1

    @property
    def m(self) -> int:
        return self.dx[1].shape[1]

    @cached_property
    def level_sizes(self) -> List[int]:
        return [p.size for p in self.parent]

    @property
    def n_leaves(self) -> int:
        return self.level_sizes[-1]

    @cached_property
    def child_start(self) -> List[np.ndarray]:
        out = [np.zeros(0, dtype=np.int64)]
        for i in range(1, self.depth + 1):
            out.append(np.searchsorted(self.parent[i], np.arange(self.level_sizes[i - 1]), side="left"))
        return out

    def cond_expectation(self, i: int, values: np.ndarray) -> np.ndarray:
        """E[values | level i-1 node] for values given at the nodes of level i."""
        v = np.asarray(values, dtype=float)
        w = self.prob[i].reshape((-1,) + (1,) * (v.ndim - 1))
        return np.add.reduceat(w * v, self.child_start[i], axis=0)

    def down(self, i: int, parent_values: np.ndarray) -> np.ndarray:
        """Broadcast values of level i-1 nodes to their children at level i."""
        return np.asarray(parent_values)[self.parent[i]]

    @cached_property
    def node_probabilities(self) -> List[np.ndarray]:
        out = [np.ones(1)]
        for i in range(1, self.depth + 1):
            out.append(out[-1][self.parent[i]] * self.prob[i])
        return out

    @property
    def leaf_probabilities(self) -> np.ndarray:
        return self.node_probabilities[-1]

    @cached_property
    def leaf_ancestors(self) -> np.ndarray:
        """(n_leaves, depth + 1): index of each leaf's ancestor at every level."""
        n = self.depth
        anc = np.empty((self.n_leaves, n + 1), dtype=np.int64)
        anc[:, n] = np.arange(self.n_leaves)
        for i in range(n, 0, -1):
            anc[:, i - 1] = self.parent[i][anc[:, i]]
        return anc

    def to_levels(self) -> List[Dict]:
        return [
            {
                "parent": self.parent[i].tolist(),
                "prob": self.prob[i].tolist(),
                "dx": self.dx[i].tolist(),
                "mark": self.mark[i].tolist(),
            }
            for i in range(1, self.depth + 1)
        ]

    @classmethod
    def from_levels(cls, times: Sequence[float], levels: Sequence[Dict]) -> "ScenarioTree":
        empty = [np.zeros(0)]
        return cls(
            times,
            empty + [np.asarray(lv["parent"]) for lv in levels],
            empty + [np.asarray(lv["prob"]) for lv in levels],
            empty + [np.asarray(lv["dx"]) for lv in levels],
            empty + [np.asarray(lv["mark"]) for lv in levels],
        )

    @classmethod
    def product_tree(cls, times: Sequence[float], child_prob, child_dx, child_mark) -> "ScenarioTree":
        """Every node gets the same children (prob, dx, mark)."""
        times = np.asarray(times, dtype=float)
        child_prob = np.asarray(child_prob, dtype=float)
        child_dx = np.atleast_2d(np.asarray(child_dx, dtype=float))
        child_mark = np.asarray(child_mark, dtype=np.int64)
        B = child_prob.size
        parent, prob, dx, mark = [np.zeros(0)], [np.zeros(0)], [np.zeros(0)], [np.zeros(0)]
        size = 1
        for _ in range(times.size - 1):
            parent.append(np.repeat(np.arange(size), B))
            prob.append(np.tile(child_prob, size))
            dx.append(np.tile(child_dx, (size, 1)))
            mark.append(np.tile(child_mark, size))
            size *= B
        return cls(times, parent, prob, dx, mark)


# --- generators --------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzData:
    """Per-step stochastic-Lipschitz coefficients and the resulting α."""

    r: np.ndarray
    theta_cont: np.ndarray
    theta_jump: np.ndarray
    alpha: np.ndarray


GeneratorFn = Callable[..., np.ndarray]


@dataclass(frozen=True)
class Generator:
    """A catalog generator f(t, y, z, u) with its Lipschitz rule.

    Arrays: ``y`` (n, ℓ), ``z`` (n, ℓ, m), ``u`` (n, ℓ, J), ``kernel`` (n, J).
    """

    name: str
    params: Dict[str, float] = field(default_factory=dict)

    def __call__(self, t: float, y, z, u, kernel) -> np.ndarray:
        p = self.params
        y = np.asarray(y, dtype=float)
        if self.name == "zero":
            return np.zeros_like(y)
        if self.name == "constant":
            return np.full_like(y, p.get("c", 0.0))
        if self.name == "linear-y":
            return p.get("lam", 0.0) * y + p.get("c", 0.0)
        if self.name == "call-payoff":
            out = p.get("a", 0.0) * np.maximum(y - p.get("strike", 0.0), 0.0)
            if p.get("b", 0.0):
                out = out + p["b"] * np.asarray(z).sum(axis=2)
            return out
        if self.name == "jump-linear":
            out = p.get("lam", 0.0) * y
            if p.get("rho", 0.0) and np.asarray(u).shape[-1]:
                out = out + p["rho"] * (np.asarray(u) * np.asarray(kernel)[:, None, :]).sum(axis=2)
            return out
        raise UnknownProblemError(f"Unknown generator {self.name!r}")

    @property
    def is_zero(self) -> bool:
        p = self.params
        return (
            self.name == "zero"
            or (self.name == "constant" and p.get("c", 0.0) == 0)
            or (self.name == "linear-y" and p.get("lam", 0.0) == 0 and p.get("c", 0.0) == 0)
            or (self.name == "call-payoff" and p.get("a", 0.0) == 0 and p.get("b", 0.0) == 0)
            or (self.name == "jump-linear" and p.get("lam", 0.0) == 0 and p.get("rho", 0.0) == 0)
        )

    def lipschitz(self, moments: "NodeMoments") -> LipschitzData:
        n = moments.dC.size
        p = self.params
        r = np.zeros(n)
        th_c = np.zeros(n)
        th_j = np.zeros(n)
        if self.name == "linear-y":
            r[:] = p.get("lam", 0.0) ** 2
        elif self.name == "call-payoff":
            a, b = p.get("a", 0.0), p.get("b", 0.0)
            channels = int(a != 0) + int(b != 0)
            r[:] = channels * a * a
            if b:
                for i, c2 in enumerate(moments.c2):
                    ok = np.all(c2 > 0, axis=1)
                    if np.any(ok):
                        th_c[i] = channels * b * b * float((1.0 / c2[ok]).sum(axis=1).max())
        elif self.name == "jump-linear":
            lam, rho = p.get("lam", 0.0), p.get("rho", 0.0)
            channels = int(lam != 0) + int(rho != 0)
            r[:] = channels * lam * lam
            if rho:
                for i, (K, zeta) in enumerate(zip(moments.K, moments.zeta)):
                    if K.shape[1] == 0:
                        continue
                    if np.any(zeta >= 1.0):
                        raise GeneratorError(f"Step {i + 1}: jump mass reaches 1, no Lipschitz bound in tnorm")
                    th_j[i] = channels * rho * rho * float((K.sum(axis=1) / (1.0 - zeta)).max())
        elif self.name not in ("zero", "constant"):
            raise UnknownProblemError(f"Unknown generator {self.name!r}")
        alpha = np.maximum.reduce([np.sqrt(r), th_c, th_j, np.full(n, p.get("alpha_floor", 0.0))])
        return LipschitzData(r, th_c, th_j, alpha)


GENERATOR_PARAMS: Dict[str, Tuple[str, ...]] = {
    "zero": ("alpha_floor",),
    "constant": ("c", "alpha_floor"),
    "linear-y": ("lam", "c", "alpha_floor"),
    "call-payoff": ("a", "strike", "b", "alpha_floor"),
    "jump-linear": ("rho", "lam", "alpha_floor"),
}


def make_generator(name: str, **params: float) -> Generator:
    """Look up a catalog generator; unknown names or parameters are errors."""
    if name not in GENERATOR_PARAMS:
        raise UnknownProblemError(f"Unknown generator {name!r}; known: {sorted(GENERATOR_PARAMS)}")
    extra = set(params) - set(GENERATOR_PARAMS[name])
    if extra:
        raise GeneratorError(f"Generator {name!r} takes {GENERATOR_PARAMS[name]}, got {sorted(extra)}")
    if name == "constant":
        params.setdefault("alpha_floor", 1.0)
    if params.get("alpha_floor", 0.0) < 0:
        raise GeneratorError("alpha_floor must be nonnegative")
    return Generator(name, {k: float(v) for k, v in params.items()})


# --- standard data -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NodeMoments:
    """Per-step predictable characteristics, indexed by the node at the step's start.

    Lists run over steps 1..n (entry i-1 for step i).
    """

    dC: np.ndarray
    mean_dx: List[np.ndarray]
    dqv: List[np.ndarray]
    c2: List[np.ndarray]
    nu: List[np.ndarray]
    K: List[np.ndarray]
    zeta: List[np.ndarray]
    djump_qv: List[np.ndarray]
    dA: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class StandardData:
    """Tree, horizon, drivers, integrator C, terminal value ξ and generator f.

    ``nu[i]`` (i = 1..n) holds the compensator atoms (n_{i-1}, J) of the marks
    ``marks`` (J, q) at each node of level i-1.
    """

    tree: ScenarioTree
    T: float
    dC: np.ndarray
    xi: np.ndarray
    generator: Generator
    marks: np.ndarray
    nu: List[np.ndarray]
    label: str = ""

    def __post_init__(self):
        n = self.tree.depth
        dC = np.asarray(self.dC, dtype=float).reshape(-1)
        if dC.size != n or np.any(dC < 0):
            raise LabError(f"Need {n} nonnegative increments of C")
        xi = np.asarray(self.xi, dtype=float)
        if xi.ndim == 1:
            xi = xi[:, None]
        if xi.shape[0] != self.tree.n_leaves:
            raise DimensionMismatchError(f"xi has {xi.shape[0]} rows for {self.tree.n_leaves} leaves")
        marks = np.asarray(self.marks, dtype=float)
        if marks.ndim < 2:
            marks = marks.reshape(-1, 1)
        if marks.size and np.any(np.all(marks == 0, axis=1)):
            raise LabError("Jump marks must be nonzero")
        if marks.shape[0] > 1 and marks.shape[0] != np.unique(marks, axis=0).shape[0]:
            raise LabError("Jump marks must be distinct")
        J = marks.shape[0]
        nu = [np.zeros((0, J))]
        for i in range(1, n + 1):
            a = np.asarray(self.nu[i], dtype=float).reshape(self.tree.level_sizes[i - 1], J)
            nu.append(a)
        object.__setattr__(self, "dC", dC)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "T", float(self.T))

    @property
    def n(self) -> int:
        return self.tree.depth

    @property
    def ell(self) -> int:
        return self.xi.shape[1]

    @property
    def m(self) -> int:
        return self.tree.m

    @property
    def J(self) -> int:
        return self.marks.shape[0]

    @property
    def q(self) -> int:
        return self.marks.shape[1]

    @cached_property
    def djump(self) -> List[np.ndarray]:
        """ΔX♮ on the edge into each node, (n_i, q) per level."""
        out = [np.zeros((1, self.q))]
        for i in range(1, self.n + 1):
            comp = self.nu[i] @ self.marks if self.J else np.zeros((self.tree.level_sizes[i - 1], self.q))
            jump = np.zeros((self.tree.level_sizes[i], self.q))
            mk = self.tree.mark[i]
            hit = mk >= 0
            if np.any(hit):
                jump[hit] = self.marks[mk[hit]]
            out.append(jump - comp[self.tree.parent[i]])
        return out

    @cached_property
    def x_cont(self) -> List[np.ndarray]:
        out = [np.zeros((1, self.m))]
        for i in range(1, self.n + 1):
            out.append(out[-1][self.tree.parent[i]] + self.tree.dx[i])
        return out

    @cached_property
    def x_jump(self) -> List[np.ndarray]:
        out = [np.zeros((1, self.q))]
        for i in range(1, self.n + 1):
            out.append(out[-1][self.tree.parent[i]] + self.djump[i])
        return out

    def jump_features(self, i: int) -> np.ndarray:
        """Compensated jump indicators 1{mark = j} - ν_j on the edges into level i, (n_i, J)."""
        ind = (self.tree.mark[i][:, None] == np.arange(self.J)[None, :]).astype(float)
        return ind - self.nu[i][self.tree.parent[i]]

    @cached_property
    def moments(self) -> NodeMoments:
        return _node_moments(self)

    @cached_property
    def lipschitz(self) -> LipschitzData:
        return self.generator.lipschitz(self.moments)

    @property
    def alpha(self) -> np.ndarray:
        return self.lipschitz.alpha

    @cached_property
    def dA(self) -> np.ndarray:
        return self.alpha ** 2 * self.dC

    @cached_property
    def A(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.dA)])

    @property
    def Phi(self) -> float:
        return float(self.dA.max()) if self.dA.size else 0.0

    def tnorm(self, U: np.ndarray, step: int, node: int) -> float:
        """Squared tnorm of the mark-indexed vector ``U`` at a node of level step-1."""
        K = self.moments.K[step - 1][node]
        return float(tnorm_sq(np.asarray(U, dtype=float), K, self.dC[step - 1]))

    # --- JSON document ------------------------------------------------------

    def to_document(self) -> "StandardDataDocument":
        return StandardDataDocument(
            label=self.label,
            T=self.T,
            times=self.tree.times.tolist(),
            dC=self.dC.tolist(),
            levels=[LevelDocument(**lv) for lv in self.tree.to_levels()],
            marks=self.marks.tolist(),
            nu=[a.tolist() for a in self.nu[1:]],
            xi=self.xi.tolist(),
            generator=GeneratorDocument(name=self.generator.name, params=dict(self.generator.params)),
        )

    def to_json(self) -> str:
        return self.to_document().model_dump_json(indent=2)

    @classmethod
    def from_document(cls, doc: "StandardDataDocument") -> "StandardData":
        tree = ScenarioTree.from_levels(doc.times, [lv.model_dump() for lv in doc.levels])
        marks = np.asarray(doc.marks, dtype=float).reshape(len(doc.marks), -1) if doc.marks else np.zeros((0, 1))
        return cls(
            tree,
            doc.T,
            doc.dC,
            doc.xi,
            make_generator(doc.generator.name, **doc.generator.params),
            marks,
            [np.zeros(0)] + [np.asarray(a, dtype=float) for a in doc.nu],
            label=doc.label,
        )

    @classmethod
    def from_json(cls, text: str) -> "StandardData":
        return cls.from_document(StandardDataDocument.model_validate_json(text))


class LevelDocument(BaseModel):
    parent: List[int]
    prob: List[float]
    dx: List[List[float]]
    mark: List[int]


class GeneratorDocument(BaseModel):
    name: str
    params: Dict[str, float] = Field(default_factory=dict)


class StandardDataDocument(BaseModel):
    label: str = ""
    T: float = Field(..., gt=0)
    times: List[float]
    dC: List[float]
    levels: List[LevelDocument]
    marks: List[List[float]] = Field(default_factory=list)
    nu: List[List[List[float]]]
    xi: List[List[float]]
    generator: GeneratorDocument


def tnorm_sq(U: np.ndarray, K: np.ndarray, dC: float) -> np.ndarray:
    """K̂(‖U − ν̂‖²) + (1 − ζ♮) ΔC ‖K̂(U)‖², with ν̂ = ΔC·K̂(U) and ζ♮ = ΔC·ΣK.

    ``U`` is (..., ℓ, J) (or (..., J)), ``K`` is (..., J); leading axes are nodes.
    """
    U = np.asarray(U, dtype=float)
    K = np.asarray(K, dtype=float)
    if U.ndim == K.ndim:
        U = U[..., None, :]
    if U.shape[-1] == 0:
        return np.zeros(U.shape[:-2])
    Kb = K[..., None, :]
    khat = (Kb * U).sum(axis=-1)
    nu_hat = dC * khat
    zeta = dC * K.sum(axis=-1)
    spread = (Kb * (U - nu_hat[..., None]) ** 2).sum(axis=-1).sum(axis=-1)
    return spread + (1.0 - zeta) * dC * (khat ** 2).sum(axis=-1)


def _node_moments(data: StandardData) -> NodeMoments:
    tree = data.tree
    mean_dx, dqv, c2, K, zeta, djq = [], [], [], [], [], []
    for i in range(1, data.n + 1):
        dx = tree.dx[i]
        outer = dx[:, :, None] * dx[:, None, :]
        qv = tree.cond_expectation(i, outer)
        dj = data.djump[i]
        jq = tree.cond_expectation(i, dj[:, :, None] * dj[:, None, :])
        dc = data.dC[i - 1]
        nu = data.nu[i]
        var = np.trace(qv, axis1=1, axis2=2)
        if dc == 0:
            if np.any(var > 0) or np.any(nu > 0):
                raise ProbabilityError(f"Step {i}: ΔC = 0 while the drivers move; c² and K are undefined")
            c2.append(np.zeros((qv.shape[0], data.m)))
            K.append(np.zeros_like(nu))
        else:
            c2.append(np.diagonal(qv, axis1=1, axis2=2) / dc)
            K.append(nu / dc)
        mean_dx.append(tree.cond_expectation(i, dx))
        dqv.append(qv)
        zeta.append(nu.sum(axis=1))
        djq.append(jq)
    return NodeMoments(data.dC, mean_dx, dqv, c2, list(data.nu[1:]), K, zeta, djq)


def predictable_brackets(data: StandardData) -> NodeMoments:
    """Δ⟨X∘⟩, c², ν atoms, K, ζ♮ and ΔA at every node, step by step."""
    mom = data.moments
    return NodeMoments(mom.dC, mom.mean_dx, mom.dqv, mom.c2, mom.nu, mom.K, mom.zeta, mom.djump_qv, data.dA)


# --- builders ------------------------------------------------------------------------


def _as_generator(generator: Union[Generator, None]) -> Generator:
    return generator if generator is not None else make_generator("zero")


def _terminal(g: Optional[TerminalMap], x_cont: np.ndarray, x_jump: np.ndarray) -> np.ndarray:
    if g is None:
        return np.zeros((x_cont.shape[0], 1))
    xi = np.asarray(g(x_cont, x_jump), dtype=float)
    return xi[:, None] if xi.ndim == 1 else xi


def _mark_setup(jump_intensity: float, marks, mark_weights, h: float):
    if jump_intensity < 0:
        raise ProbabilityError("Jump intensity must be nonnegative")
    if jump_intensity == 0:
        return np.zeros((0, 1)), np.zeros(0)
    marks = np.asarray(marks, dtype=float)
    marks = marks.reshape(marks.shape[0], -1) if marks.ndim else marks.reshape(1, 1)
    weights = np.full(marks.shape[0], 1.0 / marks.shape[0]) if mark_weights is None else np.asarray(mark_weights, dtype=float)
    if weights.size != marks.shape[0] or np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ProbabilityError("Mark weights must be positive, one per mark, and sum to 1")
    p_jump = jump_intensity * h
    if p_jump >= 1.0:
        raise ProbabilityError(f"Jump probability per step λT/k = {p_jump:.4g} must be < 1")
    return marks, p_jump * weights


def build_random_walk_data(
    k: int,
    T: float = 1.0,
    generator: Optional[Generator] = None,
    g: Optional[TerminalMap] = None,
    jump_intensity: float = 0.0,
    marks: Sequence = (1.0,),
    mark_weights: Optional[Sequence[float]] = None,
    sigma: float = 1.0,
    m: int = 1,
) -> StandardData:
    """Product tree of the scaled walk (2^m sign patterns) and the jump walk (none or one mark).

    ``g`` maps terminal (X∘_T, X♮_T), arrays of shape (n_leaves, m) and
    (n_leaves, q), to ξ.
    """
    if k < 1:
        raise LabError("Need at least one step")
    h = T / k
    mk, pj = _mark_setup(jump_intensity, marks, mark_weights, h)
    signs = np.array(list(product((1.0, -1.0), repeat=m)))
    cont_p = np.full(signs.shape[0], 0.5 ** m)
    jump_options = [(-1, 1.0 - pj.sum())] + [(j, pj[j]) for j in range(mk.shape[0])]
    child_prob, child_dx, child_mark = [], [], []
    for j, pjmp in jump_options:
        for s, ps in zip(signs, cont_p):
            child_prob.append(pjmp * ps)
            child_dx.append(sigma * np.sqrt(h) * s)
            child_mark.append(j)
    times = np.linspace(0.0, T, k + 1)
    tree = ScenarioTree.product_tree(times, child_prob, child_dx, child_mark)
    nu = [np.zeros(0)] + [np.tile(pj, (tree.level_sizes[i - 1], 1)) for i in range(1, k + 1)]
    xi_placeholder = np.zeros((tree.n_leaves, 1))
    data = StandardData(tree, T, np.full(k, h), xi_placeholder, _as_generator(generator), mk, nu, label=f"random-walk k={k}")
    xi = _terminal(g, data.x_cont[-1], data.x_jump[-1])
    out = StandardData(tree, T, data.dC, xi, data.generator, mk, nu, label=data.label)
    logger.debug("random walk k=%d: %d leaves, %d marks", k, tree.n_leaves, mk.shape[0])
    return out


def build_deterministic_data(n: int, T: float = 1.0, generator: Optional[Generator] = None, xi=1.0) -> StandardData:
    """Single-branch tree, X∘ ≡ X♮ ≡ 0, C_t = ⌊nt/T⌋·T/n."""
    if n < 1:
        raise LabError("Need at least one step")
    tree = ScenarioTree.product_tree(np.linspace(0.0, T, n + 1), [1.0], [[0.0]], [-1])
    xi = np.atleast_1d(np.asarray(xi, dtype=float))[None, :]
    nu = [np.zeros(0)] + [np.zeros((1, 0)) for _ in range(n)]
    return StandardData(tree, T, np.full(n, T / n), xi, _as_generator(generator), np.zeros((0, 1)), nu, label=f"deterministic n={n}")


def build_random_tree_data(
    rng: np.random.Generator,
    depth: int,
    ell: int = 1,
    m: int = 1,
    n_marks: int = 1,
    max_continuous: int = 3,
    generator: Optional[Generator] = None,
) -> StandardData:
    """Randomized product-structured tree: centred continuous branches times jump branches.

    Branch counts, probabilities, increments, marks, ΔC and ξ are all drawn
    from ``rng``; every node has its own draw.
    """
    marks = rng.uniform(0.5, 2.0, size=(n_marks, 1)) * rng.choice((-1.0, 1.0), size=(n_marks, 1))
    marks = np.unique(marks, axis=0)
    J = marks.shape[0]
    times = np.linspace(0.0, 1.0, depth + 1)
    parent, prob, dxs, mark, nu = [np.zeros(0)], [np.zeros(0)], [np.zeros(0)], [np.zeros(0)], [np.zeros(0)]
    size = 1
    for _ in range(depth):
        lp, lpr, ldx, lmk, lnu = [], [], [], [], []
        for node in range(size):
            nb = int(rng.integers(2, max_continuous + 1))
            pc = rng.dirichlet(np.ones(nb))
            raw = rng.normal(size=(nb, m))
            dx = raw - pc @ raw
            pj = rng.dirichlet(np.ones(J + 1)) * 0.3 if J else np.zeros(1)
            opts = [(-1, 1.0 - pj[:J].sum())] + [(j, pj[j]) for j in range(J)]
            for j, pjmp in opts:
                for b in range(nb):
                    lp.append(node)
                    lpr.append(pjmp * pc[b])
                    ldx.append(dx[b])
                    lmk.append(j)
            lnu.append(pj[:J])
        parent.append(np.array(lp))
        prob.append(np.array(lpr))
        dxs.append(np.array(ldx))
        mark.append(np.array(lmk))
        nu.append(np.array(lnu).reshape(size, J))
        size = len(lp)
    tree = ScenarioTree(times, parent, prob, dxs, mark)
    dC = rng.uniform(0.5, 1.5, size=depth) / depth
    xi = rng.normal(size=(tree.n_leaves, ell))
    return StandardData(tree, 1.0, dC, xi, _as_generator(generator), marks if J else np.zeros((0, 1)), nu, label="random tree")


# --- condition diagnostics ---------------------------------------------------------------


@dataclass
class DataDiagnostics:
    label: str
    a_T: float
    a_bar_ok: bool
    max_dA: float
    max_dA_step: int
    phi: float
    phi_ok: bool
    probability_ok: bool
    compensator_ok: bool
    drivers_centred: bool
    xi_moment: float
    m_star: Optional[float] = None
    certified: Optional[bool] = None

    @property
    def passed(self) -> bool:
        return all((self.a_bar_ok, self.phi_ok, self.probability_ok, self.compensator_ok, self.drivers_centred))


@dataclass
class ConditionReport:
    entries: List[DataDiagnostics]
    max_xi_moment: float
    terminal_gaps: List[float]
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "max_xi_moment": self.max_xi_moment,
            "terminal_gaps": self.terminal_gaps,
            "failures": self.failures,
            "entries": [dict(vars(e), passed=e.passed) for e in self.entries],
        }


def _quantile_l2(x: np.ndarray, px: np.ndarray, y: np.ndarray, py: np.ndarray) -> float:
    """L² distance of the comonotone coupling of two discrete laws on R."""
    ox, oy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, px, y, py = x[ox], px[ox], y[oy], py[oy]
    cuts = np.unique(np.concatenate([[0.0], np.cumsum(px), np.cumsum(py)]))
    cuts = cuts[cuts <= 1.0 + _PROB_TOL]
    mids = 0.5 * (cuts[1:] + cuts[:-1])
    w = np.diff(cuts)
    ix = np.minimum(np.searchsorted(np.cumsum(px), mids), x.size - 1)
    iy = np.minimum(np.searchsorted(np.cumsum(py), mids), y.size - 1)
    return float(np.sqrt((w * (x[ix] - y[iy]) ** 2).sum()))


def validate_conditions(
    data: Union[StandardData, Sequence[StandardData]],
    A_bar: float = 1.0,
    beta_hat: Optional[float] = None,
    phi: Optional[float] = None,
    ui_delta: float = 0.25,
) -> ConditionReport:
    """Check A_T ≤ Ā, ΔA ≤ Φ, probabilities, compensators and ξ integrability.

    ``phi`` is the declared bound on ΔA (default: each instance's own max).
    With ``beta_hat`` every entry also carries M*(β̂, Φ) and the 1/4 flag.
    Never raises for a failed check.
    """
    seq = [data] if isinstance(data, StandardData) else list(data)
    entries, failures = [], []
    for d in seq:
        tree = d.tree
        dA = d.dA
        step = int(np.argmax(dA)) + 1 if dA.size else 0
        declared = d.Phi if phi is None else float(phi)
        prob_ok = all(
            np.allclose(np.bincount(tree.parent[i], weights=tree.prob[i]), 1.0, atol=1e-10) for i in range(1, d.n + 1)
        ) and abs(tree.leaf_probabilities.sum() - 1.0) < 1e-10
        comp_ok, centred = True, True
        for i in range(1, d.n + 1):
            if d.J:
                hits = (tree.mark[i][:, None] == np.arange(d.J)[None, :]).astype(float)
                freq = tree.cond_expectation(i, hits)
                comp_ok &= bool(np.allclose(freq, d.nu[i], atol=1e-10) and np.all(d.nu[i].sum(axis=1) <= 1.0))
            centred &= bool(np.allclose(d.moments.mean_dx[i - 1], 0.0, atol=1e-10))
        norms = np.linalg.norm(d.xi, axis=1)
        moment = float((tree.leaf_probabilities * norms ** (2.0 + ui_delta)).sum())
        entry = DataDiagnostics(
            label=d.label,
            a_T=float(d.A[-1]),
            a_bar_ok=bool(d.A[-1] <= A_bar + 1e-12),
            max_dA=d.Phi,
            max_dA_step=step,
            phi=declared,
            phi_ok=bool(d.Phi <= declared + 1e-12),
            probability_ok=bool(prob_ok),
            compensator_ok=bool(comp_ok),
            drivers_centred=bool(centred),
            xi_moment=moment,
        )
        if beta_hat is not None:
            try:
                entry.m_star = m_star(beta_hat, d.Phi)[0]
                entry.certified = entry.m_star < QUARTER
            except BracketError:
                entry.certified = False
        if not entry.a_bar_ok:
            failures.append(f"{d.label}: A_T = {entry.a_T:.4g} exceeds A_bar = {A_bar}")
        if not entry.phi_ok:
            failures.append(f"{d.label}: ΔA = {d.Phi:.4g} at step {step} exceeds Φ = {declared}")
        if not entry.probability_ok:
            failures.append(f"{d.label}: transition probabilities inconsistent")
        if not entry.compensator_ok:
            failures.append(f"{d.label}: compensator atoms differ from mark probabilities")
        if not entry.drivers_centred:
            failures.append(f"{d.label}: continuous driver increments are not centred")
        entries.append(entry)
    gaps: List[float] = []
    if len(seq) > 1:
        last = seq[-1]
        for d in seq:
            gaps.append(
                sum(
                    _quantile_l2(d.xi[:, c], d.tree.leaf_probabilities, last.xi[:, c], last.tree.leaf_probabilities)
                    for c in range(min(d.ell, last.ell))
                )
            )
    report = ConditionReport(entries, max((e.xi_moment for e in entries), default=0.0), gaps, failures)
    for msg in failures:
        logger.warning("condition check: %s", msg)
    return report


# --- Monte Carlo path sampler ---------------------------------------------------------------


@dataclass(frozen=True)
class WalkSample:
    """Sampled scalar walks: ``ups`` (n, k) up-move indicators, ``marks`` (n, k)
    mark index or -1, cumulative ``x_cont`` and ``x_jump`` of shape (n, k + 1)."""

    ups: np.ndarray
    marks: np.ndarray
    x_cont: np.ndarray
    x_jump: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.ups.shape[0]

    @property
    def up_counts(self) -> np.ndarray:
        """Number of up moves up to each time, (n, k + 1)."""
        return np.concatenate([np.zeros((self.n_paths, 1), dtype=np.int64), np.cumsum(self.ups, axis=1)], axis=1)


@dataclass(frozen=True)
class RandomWalkDriver:
    """Scalar scaled walk with an optional scalar-mark jump walk, as a path sampler."""

    k: int
    T: float = 1.0
    sigma: float = 1.0
    jump_intensity: float = 0.0
    marks: Tuple[float, ...] = (1.0,)
    mark_weights: Optional[Tuple[float, ...]] = None

    @property
    def h(self) -> float:
        return self.T / self.k

    @cached_property
    def mark_setup(self) -> Tuple[np.ndarray, np.ndarray]:
        return _mark_setup(self.jump_intensity, self.marks, self.mark_weights, self.h)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.k + 1)

    def build_data(self, generator: Optional[Generator] = None, g: Optional[TerminalMap] = None) -> StandardData:
        return build_random_walk_data(
            self.k, self.T, generator, g, self.jump_intensity, self.marks, self.mark_weights, self.sigma
        )

    def rng(self, seed: int, block: int = 0) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(self.k, block)))

    def sample(self, n_paths: int, seed: int, block: int = 0) -> WalkSample:
        rng = self.rng(seed, block)
        ups = rng.random((n_paths, self.k)) < 0.5
        dx = np.where(ups, 1.0, -1.0) * self.sigma * np.sqrt(self.h)
        marks, pj = self.mark_setup
        if marks.shape[0]:
            u = rng.random((n_paths, self.k))
            edges = np.cumsum(pj)
            idx = np.searchsorted(edges, u, side="right")
            mk = np.where(idx < marks.shape[0], idx, -1)
            vals = np.where(mk >= 0, marks[np.maximum(mk, 0), 0], 0.0)
            dj = vals - float(pj @ marks[:, 0])
        else:
            mk = np.full((n_paths, self.k), -1)
            dj = np.zeros((n_paths, self.k))
        zero = np.zeros((n_paths, 1))
        return WalkSample(
            ups.astype(np.int64),
            mk.astype(np.int64),
            np.concatenate([zero, np.cumsum(dx, axis=1)], axis=1),
            np.concatenate([zero, np.cumsum(dj, axis=1)], axis=1),
        )


def donsker_coupled_paths(
    k: int, n_paths: int, seed: int, T: float = 1.0, sigma: float = 1.0, ratio: int = 4
) -> Tuple[List[StepPath], List[StepPath]]:
    """Walks at k and ratio·k steps on one probability space.

    The coarse walk is embedded in the fine one (step ratio^{-1/2} of the
    coarse step) through successive exits of the fine walk from a band of
    one coarse step around the last coarse value.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k, ratio)))
    fine_k = ratio * k
    s_coarse = sigma * np.sqrt(T / k)
    s_fine = sigma * np.sqrt(T / fine_k)
    units = int(round(s_coarse / s_fine))
    length = 4 * fine_k
    steps = rng.choice((-1, 1), size=(n_paths, length))
    pos = np.cumsum(steps, axis=1)
    signs = np.zeros((n_paths, k))
    count = np.zeros(n_paths, dtype=np.int64)
    anchor = np.zeros(n_paths, dtype=np.int64)
    for j in range(length):
        gap = pos[:, j] - anchor
        hit = (np.abs(gap) >= units) & (count < k)
        rows = np.nonzero(hit)[0]
        signs[rows, count[rows]] = np.sign(gap[rows])
        anchor[rows] = pos[rows, j]
        count[rows] += 1
    short = count < k
    if np.any(short):
        # exits exhausted the simulated fine walk; finish with fresh signs
        for r in np.nonzero(short)[0]:
            signs[r, count[r]:] = rng.choice((-1.0, 1.0), size=k - count[r])
    coarse_grid = np.linspace(0.0, T, k + 1)
    fine_grid = np.linspace(0.0, T, fine_k + 1)
    window = np.nextafter(T, np.inf)
    coarse, fine = [], []
    for r in range(n_paths):
        cvals = np.concatenate([[0.0], s_coarse * np.cumsum(signs[r])])
        fvals = np.concatenate([[0.0], s_fine * pos[r, :fine_k]])
        coarse.append(StepPath.from_grid(coarse_grid, cvals, T=window))
        fine.append(StepPath.from_grid(fine_grid, fvals, T=window))
    return coarse, fine
