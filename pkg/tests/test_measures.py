"""
Test finite measures, their distances, integrals and the weak-convergence criteria.
"""

import unittest
import sys
import os

import numpy as np
import pytest

# Add the repository root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from tools.errors import LabError, WindowError
from tools.measures import (
    FiniteMeasure,
    discretize_sparse,
    doubly_indexed_gap,
    integrate,
    interval_sup_distance,
    ks_distance,
    running_integral,
    uniform_weak_gap,
    weak_convergence_report,
)
from tools.paths import LinearPath, SparsePartition, StepPath


class TestFiniteMeasure(unittest.TestCase):

    def test_atoms_are_merged_and_sorted(self):
        mu = FiniteMeasure.atomic([0.5, 0.2, 0.5], [0.1, 0.2, 0.3])
        np.testing.assert_array_equal(mu.atom_locations, [0.2, 0.5])
        np.testing.assert_allclose(mu.atom_masses, [0.2, 0.4])
        self.assertAlmostEqual(mu.mass, 0.6)
        self.assertAlmostEqual(mu.max_jump, 0.4)

    def test_origin_is_not_charged(self):
        with self.assertRaises(LabError):
            FiniteMeasure.atomic([0.0], [1.0])
        with self.assertRaises(LabError):
            FiniteMeasure.atomic([1.0], [-1.0])

    def test_lebesgue(self):
        mu = FiniteMeasure.lebesgue(0.5, 1.5, density=2.0)
        self.assertAlmostEqual(mu.mass, 2.0)
        self.assertAlmostEqual(float(mu.F(1.0)), 1.0)
        self.assertTrue(mu.is_atomless)
        self.assertEqual(mu.support_end, 1.5)
        with self.assertRaises(WindowError):
            FiniteMeasure.lebesgue(1.0, 1.0)

    def test_left_and_right_distribution(self):
        mu = FiniteMeasure.atomic([1.0], [0.3])
        self.assertEqual(float(mu.F(1.0)), 0.3)
        self.assertEqual(float(mu.F_left(1.0)), 0.0)
        self.assertAlmostEqual(mu.tail_mass(1.0), 0.3)
        self.assertEqual(mu.tail_mass(1.5), 0.0)

    def test_sum(self):
        total = FiniteMeasure.atomic([0.5], [1.0]) + FiniteMeasure.lebesgue()
        self.assertAlmostEqual(total.mass, 2.0)
        self.assertAlmostEqual(float(total.F(0.5)), 1.5)

    def test_text_record(self):
        mu = FiniteMeasure.atomic([0.25, 1 / 3], [0.1, 0.7]) + FiniteMeasure.lebesgue(0.0, 2.0, 0.5)
        back = FiniteMeasure.from_text(mu.to_text())
        np.testing.assert_array_equal(back.atom_locations, mu.atom_locations)
        np.testing.assert_array_equal(back.atom_masses, mu.atom_masses)
        np.testing.assert_array_equal(back.cdf_values, mu.cdf_values)
        with self.assertRaises(LabError):
            FiniteMeasure.from_text("bogus: (1,2)")


class TestDistances(unittest.TestCase):

    def test_uniform_atoms_against_lebesgue(self):
        mu = FiniteMeasure.uniform_atoms(10)
        nu = FiniteMeasure.lebesgue()
        self.assertAlmostEqual(ks_distance(mu, nu), 0.1)
        self.assertAlmostEqual(interval_sup_distance(mu, nu, 1.0), 0.1)

    def test_mass_escaping_to_infinity(self):
        mu = FiniteMeasure.atomic([5.0], [1.0])
        self.assertEqual(ks_distance(mu, FiniteMeasure.zero()), 1.0)
        self.assertEqual(ks_distance(mu, FiniteMeasure.zero(), window=2.0), 0.0)

    def test_interval_distance_on_common_atom(self):
        mu = FiniteMeasure.atomic([1.0], [0.3])
        nu = FiniteMeasure.atomic([1.0], [0.5])
        self.assertAlmostEqual(interval_sup_distance(mu, nu, 2.0), 0.2)
        with self.assertRaises(WindowError):
            interval_sup_distance(mu, nu, 0.0)


class TestIntegrals(unittest.TestCase):

    def test_identity_against_atoms_and_lebesgue(self):
        ident = LinearPath.capped_identity(cap=1.0, T=2.0)
        self.assertAlmostEqual(float(integrate(ident, FiniteMeasure.uniform_atoms(4))[0]), 0.625)
        self.assertAlmostEqual(float(integrate(ident, FiniteMeasure.lebesgue())[0]), 0.5)

    def test_step_integrand_sees_cadlag_value_at_atoms(self):
        alpha = StepPath.indicator(0.5, 1.0)
        mu = FiniteMeasure.atomic([0.5], [2.0])
        self.assertEqual(float(integrate(alpha, mu)[0]), 2.0)
        self.assertEqual(float(integrate(alpha, mu, 0.5, closed=False)[0]), 0.0)

    def test_running_integral(self):
        ident = LinearPath.capped_identity(cap=1.0, T=1.0)
        path = running_integral(ident, FiniteMeasure.lebesgue(), resolution=8)
        self.assertAlmostEqual(float(path.evaluate(0.5)[0]), 0.125)
        self.assertAlmostEqual(float(path.evaluate(0.999)[0]), float(integrate(ident, FiniteMeasure.lebesgue(), 0.875)[0]))

    def test_discretize_moves_mass_left(self):
        part = SparsePartition(np.array([0.0, 0.5, 1.0]), 0.25)
        moved = discretize_sparse(FiniteMeasure.lebesgue(), part)
        np.testing.assert_allclose(moved.atom_locations, [0.0, 0.5])
        np.testing.assert_allclose(moved.atom_masses, [0.5, 0.5])


class TestWeakConvergence(unittest.TestCase):

    def test_criteria_settle_together(self):
        ks = [2, 4, 8, 16, 32, 64]
        seq = [FiniteMeasure.uniform_atoms(k) for k in ks]
        report = weak_convergence_report(seq, FiniteMeasure.lebesgue(), windows=[0.5, 1.0], tol=0.05, labels=ks)
        self.assertTrue(report.atomless_limit)
        # the midpoint sampling of (b) sees half a step, the suprema a full one
        self.assertEqual(report.criteria["b"].first_pass, 16)
        self.assertEqual(report.criteria["d"].first_pass, 32)
        self.assertEqual(report.criteria["e"].first_pass, 32)
        self.assertEqual(report.criteria["d"].last_violation, 16)
        self.assertTrue(all(report.lemma_check))
        self.assertAlmostEqual(report.max_mass, 1.0)

    def test_atomic_limit_skips_j1_criteria(self):
        seq = [FiniteMeasure.atomic([1.0 + 1.0 / k], [1.0]) for k in (2, 4, 8)]
        report = weak_convergence_report(seq, FiniteMeasure.atomic([1.0], [1.0]), 2.0, tol=0.05)
        self.assertFalse(report.atomless_limit)
        self.assertTrue(all(v is None for v in report.criteria["c"].values))
        self.assertTrue(report.notes)
        payload = report.to_dict()
        self.assertIn("tightness", payload["criteria"])


@pytest.mark.slow
class TestUniformAtomFamily(unittest.TestCase):
    """Atoms j/k of mass 1/k against Lebesgue on [0, 1] at tolerance 0.01."""

    def test_criteria_cross_together(self):
        ks = [25, 50, 100, 150, 300, 600]
        seq = [FiniteMeasure.uniform_atoms(k) for k in ks]
        report = weak_convergence_report(seq, FiniteMeasure.lebesgue(), windows=1.0, tol=0.01, labels=ks)
        crossings = []
        for name in ("b", "c", "d", "e"):
            values = report.criteria[name].values
            self.assertGreater(values[0], 0.01, name)
            self.assertTrue(all(v <= 0.01 for v in values[3:]), name)
            crossings.append(report.criteria[name].first_pass)
        self.assertLessEqual(max(crossings), 150)
        self.assertLessEqual(max(crossings) / min(crossings), 6)
        self.assertIsNone(report.criteria["tightness"].last_violation)
        for k, d, e in zip(ks, report.criteria["d"].values, report.criteria["e"].values):
            self.assertAlmostEqual(d, 1.0 / k, places=12)
            self.assertAlmostEqual(e, 1.0 / k, places=12)


class TestUniformGap(unittest.TestCase):

    def test_identity_family(self):
        family = [LinearPath.capped_identity(cap=1.0, T=2.0)]
        for k, expected in ((4, 0.125), (100, 0.005)):
            gap = uniform_weak_gap(family, FiniteMeasure.uniform_atoms(k), FiniteMeasure.lebesgue(), 1.5, 0.01)
            self.assertAlmostEqual(gap.exact_gap, expected)
            self.assertGreaterEqual(gap.certificate, gap.exact_gap)

    def test_constant_and_capped_identity(self):
        family = [StepPath.constant(1.0, T=2.0), LinearPath.capped_identity(cap=1.0, T=2.0)]
        for k in (4, 10, 100, 250):
            gap = uniform_weak_gap(family, FiniteMeasure.uniform_atoms(k), FiniteMeasure.lebesgue(), 1.5, 0.01)
            self.assertAlmostEqual(gap.members[0]["gap"], 0.0, places=12)
            self.assertAlmostEqual(gap.exact_gap, 1.0 / (2 * k), places=12)
            self.assertGreaterEqual(gap.certificate, gap.exact_gap)

    def test_limit_must_be_atomless(self):
        with self.assertRaises(LabError):
            uniform_weak_gap(
                [LinearPath.capped_identity()],
                FiniteMeasure.uniform_atoms(4),
                FiniteMeasure.uniform_atoms(8),
                1.5,
                0.01,
            )


class TestDoublyIndexedGap(unittest.TestCase):

    def test_joint_limit(self):
        alphas = [LinearPath.capped_identity(cap=1.0, T=2.0)] * 4
        mus = [FiniteMeasure.uniform_atoms(m) for m in (10, 20, 40, 80)]
        result = doubly_indexed_gap(alphas, mus, FiniteMeasure.lebesgue())
        self.assertTrue(result.converges)
        self.assertIsNone(result.failure_channel)
        self.assertAlmostEqual(result.verdict.joint_limit, 0.00625)

    def test_atomic_limit_is_reported(self):
        alphas = [LinearPath.capped_identity(cap=1.0, T=2.0)] * 3
        mus = [FiniteMeasure.uniform_atoms(m) for m in (10, 20, 40)]
        result = doubly_indexed_gap(alphas, mus, FiniteMeasure.uniform_atoms(100))
        self.assertFalse(result.converges)
        self.assertEqual(result.failure_channel, "atomless hypothesis violated")


if __name__ == '__main__':
    unittest.main()
