"""
Stability lab for backward stochastic differential equations with jumps.
"""

__version__ = '0.1.0'

from .constants import certify, m_star, pi_star, pi_tilde_star, select_k_star
from .drivers import StandardData, build_deterministic_data, build_random_walk_data, make_generator
from .errors import LabError
from .harness import ConvergenceTable, distance_estimators, emit_report, stability_experiment
from .limits import DoubleTable, moore_osgood_a, moore_osgood_b
from .measures import FiniteMeasure, ks_distance, weak_convergence_report
from .paths import StepPath, j1_distance, sup_distance
from .references import reference_problem, reference_solution
from .solver import solve, star_norm

__all__ = [
    'certify',
    'm_star',
    'pi_star',
    'pi_tilde_star',
    'select_k_star',
    'StandardData',
    'build_deterministic_data',
    'build_random_walk_data',
    'make_generator',
    'LabError',
    'ConvergenceTable',
    'distance_estimators',
    'emit_report',
    'stability_experiment',
    'DoubleTable',
    'moore_osgood_a',
    'moore_osgood_b',
    'FiniteMeasure',
    'ks_distance',
    'weak_convergence_report',
    'StepPath',
    'j1_distance',
    'sup_distance',
    'reference_problem',
    'reference_solution',
    'solve',
    'star_norm',
]
