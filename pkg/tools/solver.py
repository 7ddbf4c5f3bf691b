#!/usr/bin/env python3
"""
solver.py
---------
Exact backward engine on scenario trees: conditional expectations, the
orthogonal (GKW) decomposition, Picard iteration for the BSDE, weighted norms,
Γ-functionals and bracket processes.

Everything is computed level by level with exact conditional expectations, so
orthogonality and the isometry hold to rounding.

Generator argument conventions (``convention``):
- ``Y_left``: the integrand at t_j reads Y at t_{j-1} (predictable evaluation),
- ``Y_right``: it reads Y at t_j.
Z and U are predictable either way: the values used on step j live at the node
where the step starts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

import numpy as np
import pandas as pd

from .constants import ContractionCertificate, picard_tail_bound
from .drivers import ScenarioTree, StandardData, tnorm_sq
from .errors import GeneratorError, LabError, NotMartingaleError

logger = logging.getLogger(__name__)

CONVENTIONS = ("Y_left", "Y_right")

MARTINGALE_TOL = 1e-9

# singular values below this fraction of the largest at a node are treated as zero
RANK_RCOND = 1e-10


def _check_convention(convention: str) -> None:
    if convention not in CONVENTIONS:
        raise LabError(f"Unknown convention {convention!r}; use one of {CONVENTIONS}")


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """One value per tree node: ``levels[i]`` has shape (n_i, dim)."""

    levels: List[np.ndarray]

    @property
    def dim(self) -> int:
        return self.levels[0].shape[1]

    @property
    def root(self) -> np.ndarray:
        return self.levels[0][0]

    @property
    def terminal(self) -> np.ndarray:
        return self.levels[-1]

    def __sub__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        return AdaptedProcess([a - b for a, b in zip(self.levels, other.levels)])

    def __add__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        return AdaptedProcess([a + b for a, b in zip(self.levels, other.levels)])

    def leaf_paths(self, data: StandardData) -> np.ndarray:
        """(n_leaves, n + 1, dim): the value along every scenario."""
        anc = data.tree.leaf_ancestors
        return np.stack([lv[anc[:, i]] for i, lv in enumerate(self.levels)], axis=1)

    @classmethod
    def zeros(cls, data: StandardData, dim: int) -> "AdaptedProcess":
        return cls([np.zeros((s, dim)) for s in data.tree.level_sizes])


@dataclass(frozen=True, eq=False)
class PicardSolution:
    """(Y, Z, U, N) of one Picard iterate.

    ``Z[j-1]`` (n_{j-1}, ℓ, m) and ``U[j-1]`` (n_{j-1}, ℓ, J) are used on step
    j; ``dN[i]`` is the orthogonal increment on the edge into each level-i node.
    """

    Y: AdaptedProcess
    Z: List[np.ndarray]
    U: List[np.ndarray]
    dN: List[np.ndarray]
    N: AdaptedProcess
    p: int = 0
    M: Optional[AdaptedProcess] = None
    L: Optional[AdaptedProcess] = None
    residual: float = 0.0


def cumulate(data: StandardData, increments: List[np.ndarray]) -> AdaptedProcess:
    """Running sums along the tree of per-edge increments."""
    levels = [increments[0]]
    for i in range(1, data.n + 1):
        levels.append(data.tree.down(i, levels[-1]) + increments[i])
    return AdaptedProcess(levels)


def zero_solution(data: StandardData) -> PicardSolution:
    tree = data.tree
    ell, m, J = data.ell, data.m, data.J
    sizes = tree.level_sizes
    return PicardSolution(
        AdaptedProcess.zeros(data, ell),
        [np.zeros((sizes[i - 1], ell, m)) for i in range(1, data.n + 1)],
        [np.zeros((sizes[i - 1], ell, J)) for i in range(1, data.n + 1)],
        [np.zeros((s, ell)) for s in sizes],
        AdaptedProcess.zeros(data, ell),
    )


def solution_difference(a: PicardSolution, b: PicardSolution, data: StandardData) -> PicardSolution:
    return PicardSolution(
        a.Y - b.Y,
        [x - y for x, y in zip(a.Z, b.Z)],
        [x - y for x, y in zip(a.U, b.U)],
        [x - y for x, y in zip(a.dN, b.dN)],
        a.N - b.N,
        p=a.p,
    )


# --- conditional expectations ----------------------------------------------------------


def backward_project(data: StandardData, leaf_values: np.ndarray) -> AdaptedProcess:
    """Martingale closure of leaf values: each node is the weighted average of its children."""
    tree = data.tree
    v = np.asarray(leaf_values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != tree.n_leaves:
        raise LabError(f"Expected {tree.n_leaves} leaf values, got {v.shape[0]}")
    levels = [v]
    for i in range(tree.depth, 0, -1):
        levels.append(tree.cond_expectation(i, levels[-1]))
    return AdaptedProcess(levels[::-1])


def martingale_defect(data: StandardData, process: AdaptedProcess) -> float:
    """max over nodes of |E[child | node] - node|."""
    tree = data.tree
    worst = 0.0
    for i in range(1, tree.depth + 1):
        gap = tree.cond_expectation(i, process.levels[i]) - process.levels[i - 1]
        worst = max(worst, float(np.abs(gap).max()))
    return worst


# --- orthogonal decomposition ------------------------------------------------------------


@dataclass
class Decomposition:
    Z: List[np.ndarray]
    U: List[np.ndarray]
    dN: List[np.ndarray]
    residual: float


def node_projection(tree: ScenarioTree, i: int, phi: np.ndarray, dM: np.ndarray, rcond: float = RANK_RCOND):
    """Weighted least squares of ΔM on the features at every level-(i-1) node.

    Rows are scaled by √(transition probability) and each node's system is
    solved by SVD with a relative rank cutoff, grouped by sibling count so the
    SVDs run as stacks. Returns the coefficients (n_{i-1}, ℓ, F) and the
    fitted values (n_i, ℓ); the fit is the orthogonal projection onto the kept
    singular directions.
    """
    par = tree.parent[i]
    start = tree.child_start[i]
    counts = np.bincount(par, minlength=tree.level_sizes[i - 1])
    w = np.sqrt(tree.prob[i])[:, None]
    A, B = phi * w, dM * w
    coef = np.zeros((counts.size, dM.shape[1], phi.shape[1]))
    fitted = np.zeros_like(dM)
    if phi.shape[1] == 0:
        return coef, fitted
    for c in np.unique(counts):
        nodes = np.flatnonzero(counts == c)
        rows = start[nodes][:, None] + np.arange(c)[None, :]
        u, s, vt = np.linalg.svd(A[rows], full_matrices=False)
        inv = np.zeros_like(s)
        np.divide(1.0, s, out=inv, where=s > rcond * s[:, :1])
        ub = np.einsum("gcr,gcl->grl", u, B[rows]) * (inv > 0)[:, :, None]
        coef[nodes] = np.einsum("grf,gr,grl->glf", vt, inv, ub)
        fitted[rows] = np.einsum("gcr,grl->gcl", u, ub) / w[rows]
    return coef, fitted


def gkw_decompose(M: AdaptedProcess, data: StandardData, tol: float = MARTINGALE_TOL) -> Decomposition:
    """Split ΔM into Z·ΔX∘ + Σ_j U_j (1{mark j} − ν_j) + ΔN node by node.

    (Z, U) is the least-squares projection of ΔM on the joint span of the
    continuous increments and the compensated jump indicators (see
    ``node_projection``); rank-deficient nodes take the minimum-norm solution.
    The residual is the largest violation of E[ΔN·feature | node] = 0 and
    E[ΔN | node] = 0.
    """
    tree = data.tree
    scale = 1.0 + max(float(np.abs(lv).max()) for lv in M.levels)
    defect = martingale_defect(data, M)
    if defect > tol * scale:
        raise NotMartingaleError(f"Input is not a martingale: node defect {defect:.3g}")
    m = data.m
    Z, U, dN = [], [], [np.zeros_like(M.levels[0])]
    residual = 0.0
    for i in range(1, data.n + 1):
        dM = M.levels[i] - tree.down(i, M.levels[i - 1])
        phi = np.concatenate([tree.dx[i], data.jump_features(i)], axis=1)
        coef, fitted = node_projection(tree, i, phi, dM)
        dn = dM - fitted
        Z.append(coef[:, :, :m])
        U.append(coef[:, :, m:])
        dN.append(dn)
        orth = tree.cond_expectation(i, dn[:, :, None] * phi[:, None, :])
        mean = tree.cond_expectation(i, dn)
        residual = max(residual, float(np.abs(orth).max(initial=0.0)), float(np.abs(mean).max()))
    return Decomposition(Z, U, dN, residual)


# --- generator integrals ------------------------------------------------------------------


def _generator_values(data: StandardData, S: PicardSolution, convention: str) -> List[np.ndarray]:
    """f(t_i, Y, Z_i, U_i) at every level-i node (entry 0 unused)."""
    _check_convention(convention)
    tree = data.tree
    out = [np.zeros((1, data.ell))]
    gen = data.generator
    for i in range(1, data.n + 1):
        if gen.is_zero:
            out.append(np.zeros((tree.level_sizes[i], data.ell)))
            continue
        y = tree.down(i, S.Y.levels[i - 1]) if convention == "Y_left" else S.Y.levels[i]
        z = tree.down(i, S.Z[i - 1])
        u = tree.down(i, S.U[i - 1])
        kernel = tree.down(i, data.moments.K[i - 1])
        try:
            f = np.asarray(gen(float(tree.times[i]), y, z, u, kernel), dtype=float)
        except (TypeError, ValueError, FloatingPointError) as exc:
            raise GeneratorError(f"Generator {gen.name!r} failed at step {i}: {exc}") from exc
        if f.shape != y.shape or not np.all(np.isfinite(f)):
            raise GeneratorError(f"Generator {gen.name!r} returned unusable values at step {i}")
        out.append(f)
    return out


def lebesgue_integral_L(data: StandardData, S: PicardSolution, convention: str = "Y_left") -> AdaptedProcess:
    """L_t = Σ_{t_j ≤ t} f(t_j, Y, Z_j, U_j) ΔC_j along every scenario."""
    tree = data.tree
    fvals = _generator_values(data, S, convention)
    levels = [np.zeros((1, data.ell))]
    for i in range(1, data.n + 1):
        levels.append(tree.down(i, levels[-1]) + fvals[i] * data.dC[i - 1])
    return AdaptedProcess(levels)


# --- Picard iteration ------------------------------------------------------------------


def picard_step(data: StandardData, S: PicardSolution, convention: str = "Y_left") -> PicardSolution:
    """M = E[ξ + L_T | ·] with L from S, Y' = M − L, (Z', U', N') from M."""
    L = lebesgue_integral_L(data, S, convention)
    M = backward_project(data, data.xi + L.terminal)
    dec = gkw_decompose(M, data)
    return PicardSolution(M - L, dec.Z, dec.U, dec.dN, cumulate(data, dec.dN), S.p + 1, M, L, dec.residual)


def iterate(data: StandardData, p_max: int, convention: str = "Y_left", start: Optional[PicardSolution] = None) -> Iterator[PicardSolution]:
    """Yield S^(1), ..., S^(p_max) from S^(0) = 0 (or ``start``)."""
    S = zero_solution(data) if start is None else start
    for _ in range(p_max):
        S = picard_step(data, S, convention)
        yield S


@dataclass
class SolveResult:
    solution: PicardSolution
    gaps: List[float]
    envelope: List[float]
    distances: List[float]
    first_norm: float
    beta: float
    certified: bool
    converged: bool
    iterates: List[PicardSolution] = field(default_factory=list, repr=False)

    @property
    def envelope_ok(self) -> bool:
        return all(d <= e * (1 + 1e-9) + 1e-300 for d, e in zip(self.distances, self.envelope))

    @property
    def gap_ratios(self) -> List[float]:
        # gaps below 1e-20 of the first one are rounding noise
        floor = 1e-20 * (self.gaps[0] if self.gaps else 0.0)
        out = []
        for a, b in zip(self.gaps, self.gaps[1:]):
            if a > floor and b > floor:
                out.append(b / a)
        return out

    def to_dict(self) -> Dict:
        return {
            "p": self.solution.p,
            "beta": self.beta,
            "certified": self.certified,
            "converged": self.converged,
            "first_norm": self.first_norm,
            "gaps": self.gaps,
            "distances": self.distances,
            "envelope": self.envelope,
            "envelope_ok": self.envelope_ok,
            "residual": self.solution.residual,
        }


def solve(
    data: StandardData,
    certificate: Optional[ContractionCertificate] = None,
    tol: float = 1e-24,
    max_p: int = 60,
    beta: Optional[float] = None,
    convention: str = "Y_left",
) -> SolveResult:
    """Iterate until the squared star-norm gap between successive iterates is below ``tol``.

    The norm weight is the certificate's β̂ (or ``beta``, default 0), normalized
    by e^{β̂A_T}. Distances of every iterate to the last one are compared with
    4^{1-p}·‖S^(1)‖².
    Running out of steps is reported, not raised.
    """
    certified = bool(certificate is not None and certificate.passes_quarter)
    if certificate is not None:
        beta = certificate.beta_hat
    beta = 0.0 if beta is None else float(beta)
    if not certified:
        logger.warning("Uncertified Picard iteration on %s (beta=%g)", data.label or "data", beta)
    zero = zero_solution(data)
    iterates: List[PicardSolution] = []
    gaps: List[float] = []
    prev = zero
    converged = False
    for S in iterate(data, max_p, convention):
        iterates.append(S)
        gap = star_norm(solution_difference(S, prev, data), data, beta, normalized=True).total
        gaps.append(gap)
        logger.debug("picard p=%d gap=%.3e residual=%.2e", S.p, gap, S.residual)
        prev = S
        if S.p > 1 and gap <= tol:
            converged = True
            break
        if S.p == 1 and (gap == 0.0 or data.generator.is_zero):
            # f = 0: the first iterate is the fixed point
            converged = True
            break
    if not converged:
        logger.warning("Picard iteration did not reach tol=%g within %d steps (last gap %.3e)", tol, max_p, gaps[-1])
    final = iterates[-1]
    first_norm = gaps[0]
    distances = [star_norm(solution_difference(final, S, data), data, beta, normalized=True).total for S in iterates]
    envelope = [picard_tail_bound(first_norm, S.p) for S in iterates]
    logger.info("solve %s: p=%d converged=%s certified=%s", data.label, final.p, converged, certified)
    return SolveResult(final, gaps, envelope, distances, first_norm, beta, certified, converged, iterates)


# --- norms --------------------------------------------------------------------------------


@dataclass
class NormRecord:
    y: float
    z: float
    u: float
    n: float
    alpha_y: float
    log_scale: float = 0.0

    @property
    def total(self) -> float:
        return self.y + self.z + self.u + self.n

    def to_dict(self) -> Dict[str, float]:
        return {
            "y": self.y,
            "z": self.z,
            "u": self.u,
            "n": self.n,
            "alpha_y": self.alpha_y,
            "total": self.total,
            "log_scale": self.log_scale,
        }


def star_norm(S: PicardSolution, data: StandardData, beta: float = 0.0, normalized: bool = False) -> NormRecord:
    """Squared star norm: E sup e^{βA}‖Y‖² plus the e^{βA}-weighted bracket
    integrals of Z, U (kernel formula) and N; ``alpha_y`` is E Σ e^{βA} α²‖Y‖² ΔC.

    With ``normalized`` the weights are e^{β(A - A_T)}, i.e. every part is
    divided by e^{βA_T} (recorded as ``log_scale``); large certified β would
    otherwise overflow.
    """
    tree = data.tree
    mom = data.moments
    log_scale = float(beta * data.A[-1]) if normalized else 0.0
    w = np.exp(beta * data.A - log_scale)
    probs = tree.node_probabilities
    run = w[0] * (S.Y.levels[0] ** 2).sum(axis=1)
    z_part = u_part = n_part = a_part = 0.0
    for i in range(1, data.n + 1):
        y2 = (S.Y.levels[i] ** 2).sum(axis=1)
        run = np.maximum(tree.down(i, run), w[i] * y2)
        pp = probs[i - 1]
        Zi = S.Z[i - 1]
        zq = np.einsum("nlm,nmk,nlk->n", Zi, mom.dqv[i - 1], Zi)
        z_part += w[i] * float((pp * zq).sum())
        uq = tnorm_sq(S.U[i - 1], mom.K[i - 1], data.dC[i - 1]) * data.dC[i - 1]
        u_part += w[i] * float((pp * uq).sum())
        nq = tree.cond_expectation(i, (S.dN[i] ** 2).sum(axis=1))
        n_part += w[i] * float((pp * nq).sum())
        a_part += w[i] * data.alpha[i - 1] ** 2 * data.dC[i - 1] * float((probs[i] * y2).sum())
    y_part = float((probs[-1] * run).sum())
    return NormRecord(y_part, z_part, u_part, n_part, a_part, log_scale)


def norms_json(record: NormRecord) -> str:
    return json.dumps(record.to_dict(), indent=2, sort_keys=True)


# --- Γ functional ---------------------------------------------------------------------------


@dataclass
class GammaStats:
    per_leaf: np.ndarray
    leaf_probabilities: np.ndarray
    delta: float

    @property
    def mean(self) -> float:
        return float((self.leaf_probabilities * self.per_leaf).sum())

    @property
    def moment(self) -> float:
        """E[Γ^{1+δ}], the de la Vallée-Poussin proxy."""
        return float((self.leaf_probabilities * self.per_leaf ** (1.0 + self.delta)).sum())

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "moment": self.moment, "delta": self.delta}


def gamma_functional(data: StandardData, S: PicardSolution, convention: str = "Y_left", delta: float = 0.25) -> GammaStats:
    """Γ = Σ ‖f(t_j, Y, Z_j, U_j)‖² / α_j² ΔC_j per scenario."""
    tree = data.tree
    fvals = _generator_values(data, S, convention)
    acc = np.zeros(1)
    for i in range(1, data.n + 1):
        f2 = (fvals[i] ** 2).sum(axis=1)
        a2 = data.alpha[i - 1] ** 2
        if a2 == 0:
            if np.any(f2 > 0):
                raise GeneratorError(f"α = 0 at step {i} while the generator is nonzero")
            inc = np.zeros_like(f2)
        else:
            inc = f2 / a2 * data.dC[i - 1]
        acc = tree.down(i, acc) + inc
    return GammaStats(acc, tree.leaf_probabilities, delta)


# --- brackets ---------------------------------------------------------------------------------

SQUARE_BRACKETS = ("[Y]", "[Z.Xc+U*mu]", "[N]", "[Y,Xc]", "[Y,Xj]", "[Y,N]")
ANGLE_BRACKETS = ("<Y>", "<Z.Xc>", "<U*mu>", "<N>", "<Y,Xc>", "<Y,Xj>", "<Y,N>")


@dataclass
class BracketSet:
    square: Dict[str, AdaptedProcess]
    angle: Dict[str, AdaptedProcess]

    def terminal(self, name: str) -> np.ndarray:
        table = self.square if name.startswith("[") else self.angle
        return table[name].terminal

    def expected_terminal(self, data: StandardData) -> Dict[str, np.ndarray]:
        p = data.tree.leaf_probabilities
        out = {}
        for name in SQUARE_BRACKETS + ANGLE_BRACKETS:
            out[name] = (p[:, None] * self.terminal(name)).sum(axis=0)
        return out


def stochastic_integral_increments(data: StandardData, S: PicardSolution, i: int) -> np.ndarray:
    """Z·ΔX∘ + Σ_j U_j (1{mark j} − ν_j) on the edges into level i."""
    tree = data.tree
    cont = np.einsum("nlm,nm->nl", tree.down(i, S.Z[i - 1]), tree.dx[i])
    jump = np.einsum("nlj,nj->nl", tree.down(i, S.U[i - 1]), data.jump_features(i))
    return cont + jump


def brackets(S: PicardSolution, data: StandardData) -> BracketSet:
    """Square brackets as running sums of products of jumps, angle brackets as
    running sums of their node-conditional expectations."""
    tree = data.tree
    mom = data.moments
    ell = data.ell
    dims = {
        "Y": 1, "Z.Xc+U*mu": 1, "N": 1, "Y,Xc": ell * data.m, "Y,Xj": ell * data.q, "Y,N": 1,
        "Z.Xc": 1, "U*mu": 1,
    }
    sq = {name: [np.zeros((1, dims[name[1:-1]]))] for name in SQUARE_BRACKETS}
    an = {name: [np.zeros((1, dims[name[1:-1]]))] for name in ANGLE_BRACKETS}
    for i in range(1, data.n + 1):
        dY = S.Y.levels[i] - tree.down(i, S.Y.levels[i - 1])
        dI = stochastic_integral_increments(data, S, i)
        dN = S.dN[i]
        dXc = tree.dx[i]
        dXj = data.djump[i]
        n_i = dY.shape[0]
        incs = {
            "Y": (dY ** 2).sum(axis=1, keepdims=True),
            "Z.Xc+U*mu": (dI ** 2).sum(axis=1, keepdims=True),
            "N": (dN ** 2).sum(axis=1, keepdims=True),
            "Y,Xc": (dY[:, :, None] * dXc[:, None, :]).reshape(n_i, -1),
            "Y,Xj": (dY[:, :, None] * dXj[:, None, :]).reshape(n_i, -1),
            "Y,N": (dY * dN).sum(axis=1, keepdims=True),
        }
        for key, inc in incs.items():
            sq[f"[{key}]"].append(tree.down(i, sq[f"[{key}]"][-1]) + inc)
        Zi = S.Z[i - 1]
        jump_part = np.einsum("nlj,nj->nl", tree.down(i, S.U[i - 1]), data.jump_features(i))
        cond = {
            "Y": tree.cond_expectation(i, incs["Y"]),
            "Z.Xc": np.einsum("nlm,nmk,nlk->n", Zi, mom.dqv[i - 1], Zi)[:, None],
            "U*mu": tree.cond_expectation(i, (jump_part ** 2).sum(axis=1, keepdims=True)),
            "N": tree.cond_expectation(i, incs["N"]),
            "Y,Xc": tree.cond_expectation(i, incs["Y,Xc"]),
            "Y,Xj": tree.cond_expectation(i, incs["Y,Xj"]),
            "Y,N": tree.cond_expectation(i, incs["Y,N"]),
        }
        for key, inc in cond.items():
            prev = an[f"<{key}>"][-1]
            an[f"<{key}>"].append(tree.down(i, prev + inc))
    return BracketSet(
        {k: AdaptedProcess(v) for k, v in sq.items()},
        {k: AdaptedProcess(v) for k, v in an.items()},
    )


# --- export ------------------------------------------------------------------------------------


def solution_table(S: PicardSolution, data: StandardData) -> pd.DataFrame:
    """One row per node: level, node id, Y, the (Z, U) used on the step leaving
    the node (blank at leaves) and ΔN on the edge into it."""
    rows = []
    n = data.n
    for i, Yl in enumerate(S.Y.levels):
        for node in range(Yl.shape[0]):
            row = {"level": i, "node": node, "t": float(data.tree.times[i])}
            for c in range(data.ell):
                row[f"Y{c}"] = Yl[node, c]
                row[f"dN{c}"] = S.dN[i][node, c]
                for a in range(data.m):
                    row[f"Z{c}_{a}"] = S.Z[i][node, c, a] if i < n else np.nan
                for j in range(data.J):
                    row[f"U{c}_m{j}"] = S.U[i][node, c, j] if i < n else np.nan
            rows.append(row)
    return pd.DataFrame(rows)
