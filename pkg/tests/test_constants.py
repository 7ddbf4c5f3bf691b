"""
Test the contraction constants, certification and k* selection.
"""

import unittest
import sys
import os

import numpy as np

# Add the repository root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from tools.constants import (
    QUARTER,
    certify,
    default_beta_hat,
    first_iterate_bound,
    m_star,
    pi_star,
    pi_tilde_star,
    picard_tail_bound,
    select_k_star,
)
from tools.errors import LabError, SelectionError


class TestClosedForms(unittest.TestCase):

    def test_pi_star_value(self):
        self.assertAlmostEqual(pi_star(1.0, 2.0, 0.0), 30.5)

    def test_pi_star_domain(self):
        with self.assertRaises(LabError):
            pi_star(2.0, 1.0, 0.0)
        with self.assertRaises(LabError):
            pi_star(1.0, 2.0, -0.1)

    def test_pi_tilde_star(self):
        self.assertEqual(pi_tilde_star(1.0, 0.0), 26.0)

    def test_tail_bound(self):
        self.assertEqual(picard_tail_bound(1.0, 3), 1.0 / 16)
        with self.assertRaises(LabError):
            picard_tail_bound(1.0, 0)

    def test_first_iterate_bound_without_generator_term(self):
        self.assertAlmostEqual(first_iterate_bound(1.0, 0.0, 2.0, 0.0), 52.0)


class TestMStar(unittest.TestCase):

    def test_scales_like_one_over_beta_without_phi(self):
        small, _ = m_star(64.0, 0.0)
        large, _ = m_star(128.0, 0.0)
        self.assertAlmostEqual(small / large, 2.0, places=6)

    def test_minimiser_is_interior(self):
        value, gamma = m_star(100.0, 0.01)
        self.assertGreater(gamma, 0.0)
        self.assertLess(gamma, 100.0)
        self.assertAlmostEqual(pi_star(gamma, 100.0, 0.01), value, places=9)

    def test_matches_a_fine_grid(self):
        value, gamma = m_star(300.0, 0.0)
        oracle = min(pi_star(g, 300.0, 0.0) for g in np.linspace(0.0, 300.0, 10001)[1:-1])
        self.assertLessEqual(value, oracle + 1e-12)
        self.assertLess(oracle - value, 1e-4)
        self.assertLessEqual(value, 0.2034)
        # witness gamma = 150
        self.assertLess(value, 61.0 / 300.0)

    def test_blows_up_for_small_beta(self):
        self.assertGreater(m_star(0.01, 0.0)[0], 800.0)

    def test_invalid_arguments(self):
        with self.assertRaises(LabError):
            m_star(0.0, 0.0)
        with self.assertRaises(LabError):
            m_star(1.0, -1.0)


class TestCertify(unittest.TestCase):

    def test_small_phi_is_certified(self):
        cert = certify(1024.0, 0.0025)
        self.assertTrue(cert.passes_quarter)
        self.assertLess(cert.m_star, QUARTER)
        self.assertTrue(cert.delta_confirmed)
        self.assertLessEqual(cert.to_dict()["delta_cross_check"], 1024.0)
        self.assertGreaterEqual(cert.grid_m_star, cert.m_star)

    def test_large_phi_is_never_certified(self):
        # 9 e Phi > 1/4 bounds M* from below
        for beta in (4.0, 64.0, 1024.0):
            self.assertFalse(certify(beta, 0.125).passes_quarter)

    def test_cross_check_pins_delta_to_beta(self):
        self.assertEqual(certify(64.0, 0.0).delta_cross_check, 64.0)
        for beta, phi in ((300.0, 0.01), (4.0, 0.125)):
            self.assertTrue(certify(beta, phi).delta_confirmed)

    def test_cross_check_can_be_skipped(self):
        cert = certify(64.0, 0.0, cross_check=False)
        self.assertIsNone(cert.delta_confirmed)
        self.assertIsNone(cert.to_dict()["grid_m_star"])

    def test_default_beta_hat(self):
        beta = default_beta_hat(0.0)
        self.assertIsNotNone(beta)
        self.assertLess(m_star(beta, 0.0)[0], QUARTER)
        if beta > 1.0:
            self.assertGreaterEqual(m_star(beta / 2.0, 0.0)[0], QUARTER)
        self.assertIsNone(default_beta_hat(0.125, candidates=(4.0, 64.0)))


class TestSelectKStar(unittest.TestCase):

    def test_first_certified_index(self):
        selection = select_k_star([0.5, 0.1, 0.0025, 0.001], 1024.0, labels=[1, 2, 3, 4])
        self.assertEqual(selection.index, 2)
        self.assertEqual(selection.label, 3)
        self.assertTrue(selection.tail_verified)
        self.assertEqual(len(selection.certificates), 4)

    def test_non_monotone_sequence(self):
        selection = select_k_star([0.001, 0.5, 0.001], 1024.0)
        self.assertEqual(selection.index, 2)

    def test_failing_tail(self):
        with self.assertRaises(SelectionError):
            select_k_star([0.001, 0.5], 1024.0)


if __name__ == '__main__':
    unittest.main()
