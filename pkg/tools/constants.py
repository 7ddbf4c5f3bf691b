#!/usr/bin/env python3
"""
constants.py
------------
Picard-contraction constants and a priori tail bounds.

    Pi*(gamma, delta, Phi) = 8/gamma + 9/delta + 9 delta e^{(delta - gamma) Phi} / (gamma (delta - gamma))
    M*(beta, Phi)          = inf over 0 < gamma < delta <= beta of Pi*, attained at delta = beta
    Pi~*(delta, Phi)       = 17 + 9 e^{delta Phi}

The minimiser in gamma has no closed form here: ``m_star`` refines a coarse
log-grid with a golden-section search and cross-checks delta = beta against a
2-D grid. A Picard scheme is certified when M*(beta_hat, Phi) < 1/4; its
squared star-norm error after p steps is then at most 4^{1-p} times the norm of
the first iterate.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import BracketError, LabError, SelectionError

logger = logging.getLogger(__name__)

QUARTER = 0.25
BETA_GRID = tuple(float(2 ** j) for j in range(0, 21))
GRID_RTOL = 1e-9


def pi_star(gamma: float, delta: float, phi: float) -> float:
    if not (0 < gamma < delta) or phi < 0:
        raise LabError(f"pi_star needs 0 < gamma < delta and phi >= 0, got ({gamma}, {delta}, {phi})")
    with np.errstate(over="ignore"):
        growth = np.exp((delta - gamma) * phi)
    return float(8.0 / gamma + 9.0 / delta + 9.0 * delta * growth / (gamma * (delta - gamma)))


def _pi_star_vec(gamma: np.ndarray, delta: float, phi: float) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return 8.0 / gamma + 9.0 / delta + 9.0 * delta * np.exp((delta - gamma) * phi) / (gamma * (delta - gamma))


def pi_tilde_star(delta: float, phi: float) -> float:
    with np.errstate(over="ignore"):
        return float(17.0 + 9.0 * np.exp(delta * phi))


def _gamma_grid(beta: float, n: int) -> np.ndarray:
    # dense near both ends of (0, beta): small gamma wins for tiny beta,
    # gamma -> beta wins when the exponential dominates
    low = np.geomspace(1e-9, 0.5, n)
    high = 1.0 - np.geomspace(1e-12, 0.5, n)
    return beta * np.unique(np.concatenate([low, high]))


def m_star(beta: float, phi: float, grid_points: int = 256) -> Tuple[float, float]:
    """(M*(beta, Phi), argmin gamma) with delta pinned to beta."""
    if not beta > 0 or phi < 0:
        raise LabError(f"m_star needs beta > 0 and phi >= 0, got ({beta}, {phi})")
    gammas = _gamma_grid(beta, grid_points)
    vals = _pi_star_vec(gammas, beta, phi)
    if not np.any(np.isfinite(vals)):
        raise BracketError(f"Pi* overflows on the whole grid at beta={beta}, phi={phi}")
    i = int(np.nanargmin(vals))
    if i == 0 or i == gammas.size - 1:
        raise BracketError(f"Grid minimum of Pi* sits on the boundary at gamma={gammas[i]}")
    bracket = (gammas[i - 1], gammas[i], gammas[i + 1])
    try:
        res = minimize_scalar(
            lambda g: float(_pi_star_vec(np.asarray(g, dtype=float), beta, phi)),
            bracket=bracket,
            method="golden",
        )
    except ValueError as exc:
        raise BracketError(f"Golden-section bracket {bracket} rejected: {exc}") from exc
    gamma = float(res.x)
    value = float(res.fun)
    if not (0 < gamma < beta) or not np.isfinite(value) or value > vals[i] * (1 + 1e-12):
        raise BracketError(f"Golden-section search left the bracket {bracket} (got gamma={gamma})")
    logger.debug("m_star(%g, %g) = %.10g at gamma = %.8g", beta, phi, value, gamma)
    return value, gamma


def cross_check_delta(beta: float, phi: float, n: int = 64) -> Tuple[float, float]:
    """Minimum of Pi* over a 2-D grid of 0 < gamma < delta <= beta and its delta.

    The grid minimum is expected at delta = beta up to grid resolution.
    """
    deltas = beta * np.linspace(1.0 / n, 1.0, n)
    best, best_delta = np.inf, beta
    for delta in deltas:
        vals = _pi_star_vec(_gamma_grid(delta, n), delta, phi)
        v = float(np.nanmin(vals))
        if v < best:
            best, best_delta = v, float(delta)
    return best, best_delta


@dataclass(frozen=True)
class ContractionCertificate:
    beta_hat: float
    phi: float
    gamma: float
    m_star: float
    passes_quarter: bool
    delta_cross_check: Optional[float] = None
    grid_m_star: Optional[float] = None
    delta_confirmed: Optional[bool] = None

    def to_dict(self) -> Dict:
        return asdict(self)


def certify(beta_hat: float, phi: float, cross_check: bool = True) -> ContractionCertificate:
    """M* at delta = beta_hat, confirmed against the 2-D grid over 0 < gamma < delta <= beta_hat.

    ``delta_confirmed`` is False when some grid pair beats the delta = beta_hat
    minimum; the certificate keeps the delta = beta_hat value either way.
    """
    value, gamma = m_star(beta_hat, phi)
    if not cross_check:
        return ContractionCertificate(beta_hat, phi, gamma, value, value < QUARTER)
    grid_value, delta = cross_check_delta(beta_hat, phi)
    confirmed = not grid_value < value * (1 - GRID_RTOL)
    if not confirmed:
        logger.warning("2-D grid beats the delta = beta minimum at beta=%g, phi=%g: %g < %g", beta_hat, phi, grid_value, value)
    return ContractionCertificate(beta_hat, phi, gamma, value, value < QUARTER, delta, grid_value, confirmed)


@dataclass
class KStarSelection:
    index: int
    label: object
    certificates: List[ContractionCertificate] = field(default_factory=list)
    tail_verified: bool = True

    def to_dict(self) -> Dict:
        return {
            "index": self.index,
            "label": self.label,
            "tail_verified": self.tail_verified,
            "certificates": [c.to_dict() for c in self.certificates],
        }


def select_k_star(phi_seq: Sequence[float], beta_hat: float, labels: Optional[Sequence] = None) -> KStarSelection:
    """Smallest index from which every M*(beta_hat, Phi^k) stays below 1/4.

    For a nonincreasing sequence this is the first passing index; otherwise a
    later failure pushes the index past it, so the returned index is always
    preceded by a failing one (or is the first).
    """
    labels = list(labels) if labels is not None else list(range(len(phi_seq)))
    certs = []
    for phi in phi_seq:
        try:
            certs.append(certify(beta_hat, float(phi)))
        except BracketError:
            certs.append(ContractionCertificate(beta_hat, float(phi), float("nan"), float("inf"), False))
    passing = [c.passes_quarter for c in certs]
    if not passing or not passing[-1]:
        raise SelectionError(f"No index qualifies: M* >= 1/4 at the end of the sequence (beta_hat={beta_hat})")
    idx = len(passing) - 1
    while idx > 0 and passing[idx - 1]:
        idx -= 1
    first = passing.index(True)
    if first != idx:
        logger.warning("Phi sequence is not monotone: index %s passes but a later one fails", labels[first])
    return KStarSelection(idx, labels[idx], certs, tail_verified=all(passing[idx:]))


def picard_tail_bound(first_iterate_norm_sq: float, p: int) -> float:
    """4^{1-p} times the squared norm of the first Picard iterate."""
    if p < 1:
        raise LabError(f"Picard index must be >= 1, got {p}")
    return 4.0 ** (1 - p) * float(first_iterate_norm_sq)


def first_iterate_bound(beta_hat: float, phi: float, xi_norm_sq: float, f0_norm_sq: float) -> float:
    value = pi_tilde_star(beta_hat, phi) * xi_norm_sq
    if f0_norm_sq:
        value += m_star(beta_hat, phi)[0] * f0_norm_sq
    return float(value)


def default_beta_hat(phi: float, candidates: Sequence[float] = BETA_GRID) -> Optional[float]:
    """Smallest grid value with M*(beta, Phi) < 1/4, or None when none qualifies."""
    for beta in candidates:
        try:
            value, _ = m_star(beta, phi)
        except BracketError:
            continue
        if value < QUARTER:
            return float(beta)
    logger.warning("No beta_hat on the grid certifies Phi = %g; iteration will be uncertified", phi)
    return None
