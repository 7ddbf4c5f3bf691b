"""
Test step paths, the J1 and sup distances, the w' modulus and L2 step approximation.
"""

import unittest
import sys
import os

import numpy as np
import pytest

# Add the repository root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from tools.errors import DimensionMismatchError, LabError, WindowError
from tools.measures import FiniteMeasure
from tools.paths import (
    LinearPath,
    SparsePartition,
    StepPath,
    check_uniform_bounded,
    j1_distance,
    j1_distance_batch,
    l2_step_approximation,
    sparse_partition,
    sup_distance,
    w_prime,
)


def _random_path(rng, times, d=2):
    """Step path on [0, 1] jumping at ``times`` with Gaussian states."""
    return StepPath(rng.normal(size=d), times, rng.normal(size=(len(times), d)), 1.0)


def _nudge(rng, p):
    """A nearby path: jump times moved by at most 0.03, states by Gaussian noise of scale 0.1."""
    times = np.sort(np.clip(p.times + rng.uniform(-0.03, 0.03, p.times.size), 1e-3, 0.999))
    if np.any(np.diff(times) <= 0):
        times = p.times
    return StepPath(p.initial + 0.1 * rng.normal(size=p.d), times, p.values + 0.1 * rng.normal(size=p.values.shape), 1.0)


def _grid_j1(pairs, M=1000):
    """J1 on [0, 1] by a bottleneck search over monotone staircase time changes on a mesh of 1/M.

    Jump times must lie on the mesh; the result then sits between the
    infimum and the infimum plus one mesh step.
    """
    grid = np.linspace(0.0, 1.0, M + 1)
    A = np.stack([a.evaluate(grid) for a, _ in pairs])
    B = np.stack([b.evaluate(grid) for _, b in pairs])
    shift = np.abs(grid[:, None] - grid[None, :])
    prev = None
    for i in range(M + 1):
        cost = np.maximum(np.linalg.norm(A[:, i, None, :] - B, axis=2), shift[i])
        row = np.empty_like(cost)
        for j in range(M + 1):
            if prev is None:
                reach = row[:, j - 1] if j else np.zeros(len(pairs))
            else:
                reach = prev[:, j]
                if j:
                    reach = np.minimum(reach, np.minimum(prev[:, j - 1], row[:, j - 1]))
            row[:, j] = np.maximum(cost[:, j], reach)
        prev = row
    return prev[:, M]


class TestStepPath(unittest.TestCase):
    """Construction, evaluation and the text record."""

    def test_jump_at_zero_is_folded_into_initial(self):
        p = StepPath([0.0], [0.0, 0.5], [[2.0], [3.0]], 1.0)
        self.assertEqual(p.n_jumps, 1)
        self.assertEqual(float(p.initial[0]), 2.0)
        self.assertEqual(float(p.evaluate(0.0)[0]), 2.0)

    def test_right_continuity_and_left_limit(self):
        p = StepPath.indicator(0.5, 1.0)
        self.assertEqual(float(p.evaluate(0.5)[0]), 1.0)
        self.assertEqual(float(p.left_limit(0.5)[0]), 0.0)
        self.assertEqual(float(p.evaluate(0.99)[0]), 1.0)

    def test_invalid_jump_times(self):
        with self.assertRaises(LabError):
            StepPath([0.0], [0.5, 0.5], [[1.0], [2.0]], 1.0)
        with self.assertRaises(WindowError):
            StepPath([0.0], [1.5], [[1.0]], 1.0)
        with self.assertRaises(WindowError):
            StepPath.constant(1.0, T=0.0)

    def test_from_grid_drops_repeated_states(self):
        p = StepPath.from_grid([0.0, 0.25, 0.5, 0.75], [0.0, 1.0, 1.0, 2.0], T=1.0)
        self.assertEqual(p.n_jumps, 2)
        np.testing.assert_array_equal(p.times, [0.25, 0.75])

    def test_restrict_keeps_jump_at_window_end(self):
        p = StepPath([0.0], [0.5, 0.8], [[1.0], [2.0]], 1.0)
        r = p.restrict(0.5)
        self.assertEqual(r.n_jumps, 1)
        self.assertEqual(p.sup_norm(0.5), 1.0)
        with self.assertRaises(WindowError):
            p.restrict(2.0)

    def test_text_record_is_exact(self):
        p = StepPath([0.1, -0.2], [1 / 3, 0.7], [[np.pi, 1e-17], [2 / 7, -5.0]], 1.0)
        q = StepPath.from_text(p.to_text())
        np.testing.assert_array_equal(q.times, p.times)
        np.testing.assert_array_equal(q.states, p.states)
        self.assertEqual(q.T, p.T)

    def test_text_record_shape_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            StepPath.from_text("1 1.0 2\n0 0\n0.5 1\n")


class TestDistances(unittest.TestCase):
    """sup and J1 distances on windows."""

    def test_shifted_indicator(self):
        a = StepPath.indicator(1.0, 2.0)
        b = StepPath.indicator(1.1, 2.0)
        self.assertAlmostEqual(j1_distance(a, b, 2.0), 0.1, places=12)
        self.assertEqual(sup_distance(a, b, 2.0), 1.0)

    def test_scaled_constant(self):
        a = StepPath.constant(1.0, T=1.0)
        b = StepPath.constant(0.5, T=1.0)
        self.assertEqual(j1_distance(a, b, 1.0), 0.5)
        self.assertEqual(sup_distance(a, b, 1.0), 0.5)

    def test_j1_never_exceeds_sup(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            ta = np.sort(rng.uniform(0.0, 1.0, 4))
            tb = np.sort(rng.uniform(0.0, 1.0, 3))
            a = StepPath([0.0], ta, rng.normal(size=(4, 1)), 1.0)
            b = StepPath([0.0], tb, rng.normal(size=(3, 1)), 1.0)
            self.assertLessEqual(j1_distance(a, b, 1.0), sup_distance(a, b, 1.0) + 1e-12)

    def test_sup_distance_location(self):
        a = StepPath.indicator(0.3, 1.0, height=2.0)
        b = StepPath.constant(0.0, T=1.0)
        value, where = sup_distance(a, b, 1.0, return_location=True)
        self.assertEqual(value, 2.0)
        self.assertEqual(where, 0.3)

    def test_sup_distance_against_linear_path(self):
        ident = LinearPath.capped_identity(cap=1.0, T=2.0)
        zero = StepPath.constant(0.0, T=2.0)
        self.assertEqual(sup_distance(ident, zero, 2.0), 1.0)
        self.assertAlmostEqual(sup_distance(ident, zero, 0.5), 0.5)

    def test_window_checks(self):
        a = StepPath.constant(1.0, T=1.0)
        with self.assertRaises(WindowError):
            j1_distance(a, a, 2.0)
        with self.assertRaises(DimensionMismatchError):
            j1_distance(a, StepPath.constant([1.0, 2.0], T=1.0), 1.0)

    def test_batch_matches_pairwise(self):
        rng = np.random.default_rng(11)
        grid = np.array([0.2, 0.4, 0.6, 0.8])
        A = np.cumsum(rng.normal(size=(5, 5, 1)), axis=1)
        B = A + rng.normal(scale=0.1, size=A.shape)
        batch = j1_distance_batch(grid, A, B, 1.0)
        for p in range(5):
            a = StepPath(A[p, 0], grid, A[p, 1:], 1.0)
            b = StepPath(B[p, 0], grid, B[p, 1:], 1.0)
            self.assertAlmostEqual(batch[p], j1_distance(a, b, 1.0), places=12)


class TestJ1Metric(unittest.TestCase):
    """Metric axioms on random triples of nearby paths with at most four jumps."""

    def test_axioms(self):
        rng = np.random.default_rng(202)
        for _ in range(300):
            a = _random_path(rng, np.sort(rng.uniform(0.0, 1.0, rng.integers(0, 5))))
            b = _nudge(rng, a)
            c = _nudge(rng, b) if rng.random() < 0.7 else _random_path(rng, np.sort(rng.uniform(0.0, 1.0, 2)))
            ab, ba = j1_distance(a, b, 1.0), j1_distance(b, a, 1.0)
            self.assertLess(j1_distance(a, a, 1.0), 1e-12)
            self.assertAlmostEqual(ab, ba, delta=1e-9)
            self.assertLessEqual(j1_distance(a, c, 1.0), ab + j1_distance(b, c, 1.0) + 1e-9)


@pytest.mark.slow
class TestJ1AgainstTimeChanges(unittest.TestCase):
    """The exact J1 value against a brute-force search over discretized time changes."""

    def test_random_pairs(self):
        rng = np.random.default_rng(101)
        grid = np.linspace(0.0, 1.0, 1001)
        slots = np.arange(10, 1000, 10)
        pairs = []
        for n in range(500):
            ia = np.sort(rng.choice(slots, rng.integers(0, 5), replace=False))
            a = _random_path(rng, grid[ia])
            if n % 2:
                b = _random_path(rng, grid[np.sort(rng.choice(slots, rng.integers(0, 5), replace=False))])
            else:
                ib = np.unique(np.clip(ia + 10 * rng.integers(-3, 4, size=ia.size), 10, 990))
                states = np.vstack([a.initial, a.values])[: ib.size + 1] + 0.05 * rng.normal(size=(ib.size + 1, 2))
                b = StepPath(states[0], grid[ib], states[1:], 1.0)
            pairs.append((a, b))
        oracle = _grid_j1(pairs)
        for (a, b), bound in zip(pairs, oracle):
            value = j1_distance(a, b, 1.0)
            self.assertLessEqual(value, bound + 1e-9)
            self.assertLessEqual(bound, value + 1e-3 + 1e-9)


class TestModulus(unittest.TestCase):
    """w'_N and sparse partitions."""

    def test_separated_jumps_have_zero_modulus(self):
        p = StepPath([0.0], [0.5, 1.5], [[1.0], [2.0]], 2.0)
        self.assertEqual(w_prime(p, 2.0, 0.4), 0.0)
        part = sparse_partition(p, 2.0, 0.4, eps=0.01)
        np.testing.assert_allclose(part.knots, [0.0, 0.5, 1.5, 2.0])
        self.assertEqual(part.oscillation(p), 0.0)

    def test_staircase(self):
        times = np.arange(1, 10) / 10.0
        p = StepPath([0.0], times, times[:, None], 1.0)
        value = w_prime(p, 1.0, 0.25)
        self.assertAlmostEqual(value, 0.2, places=9)
        part = sparse_partition(p, 1.0, 0.25, eps=0.05)
        self.assertLessEqual(part.oscillation(p), 0.25)
        gaps = np.diff(part.knots)
        self.assertTrue(np.all(gaps[:-1] > 0.25))

    def test_parameter_checks(self):
        p = StepPath.constant(0.0, T=1.0)
        with self.assertRaises(LabError):
            w_prime(p, 1.0, 0.0)
        with self.assertRaises(WindowError):
            w_prime(p, 1.0, 1.0)

    def test_partition_must_be_sparse(self):
        with self.assertRaises(LabError):
            SparsePartition(np.array([0.0, 0.1, 0.2, 1.0]), 0.15)
        part = SparsePartition(np.array([0.0, 0.5, 0.6]), 0.3)
        self.assertEqual(part.n_cells, 2)
        self.assertEqual(part.N, 0.6)


class TestUniformBound(unittest.TestCase):

    def test_bounded_family(self):
        seq = [StepPath.indicator(0.5, 1.0, height=1.0 + 1.0 / k) for k in range(1, 6)]
        report = check_uniform_bounded(seq, tail_bound=1.5)
        self.assertTrue(report.passed)
        self.assertEqual(report.bound, 2.0)

    def test_infinite_terminal_value(self):
        seq = [StepPath.constant(1.0, T=1.0)]
        report = check_uniform_bounded(seq, terminal_values=[np.inf], tail_bound=0.0)
        self.assertFalse(report.passed)
        self.assertIsNone(report.bound)
        self.assertTrue(report.failures)

    def test_tail_must_be_declared(self):
        seq = [StepPath.constant(c, T=1.0) for c in (1.0, -5.0, 2.0)]
        report = check_uniform_bounded(seq)
        self.assertFalse(report.tail_bound)
        self.assertIn("condition (3): no tail limsup declared", report.failures)
        report = check_uniform_bounded(seq, tail_bound=0.0)
        self.assertTrue(report.passed)
        self.assertEqual(report.bound, 5.0)

    def test_infinite_tail(self):
        seq = [StepPath([0.0], [k, k + 1.0], [[float(k)], [0.0]], k + 2.0) for k in range(1, 6)]
        report = check_uniform_bounded(seq, tail_bound=np.inf)
        self.assertTrue(report.local_bounds)
        self.assertFalse(report.passed)


class TestL2Approximation(unittest.TestCase):

    def test_step_target_is_returned(self):
        p = StepPath.indicator(0.5, 1.0)
        self.assertIs(l2_step_approximation(p, FiniteMeasure.lebesgue(), 0.1), p)

    def test_identity_on_lebesgue(self):
        target = LinearPath([0.0, 1.0], [[0.0], [1.0]], 2.0)
        approx = l2_step_approximation(target, FiniteMeasure.lebesgue(), 0.01)
        # dyadic knots
        scaled = approx.times * 2 ** 20
        np.testing.assert_allclose(scaled, np.round(scaled))
        t = (np.arange(200000) + 0.5) / 200000
        err = np.mean((t - approx.evaluate(t)[:, 0]) ** 2)
        self.assertLess(err, 1e-4)

    def test_eps_must_be_positive(self):
        with self.assertRaises(LabError):
            l2_step_approximation(lambda t: t, FiniteMeasure.lebesgue(), 0.0)


if __name__ == '__main__':
    unittest.main()
