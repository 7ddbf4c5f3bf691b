"""
Test the backward engine: projections, the orthogonal decomposition, Picard
iteration, star norms, the Gamma functional and brackets.
"""

import unittest
import sys
import os

import numpy as np
import pytest

# Add the repository root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from tools.constants import certify
from tools.drivers import (
    ScenarioTree,
    build_deterministic_data,
    build_random_tree_data,
    build_random_walk_data,
    make_generator,
)
from tools.errors import LabError, NotMartingaleError
from tools.solver import (
    ANGLE_BRACKETS,
    SQUARE_BRACKETS,
    AdaptedProcess,
    backward_project,
    brackets,
    gamma_functional,
    gkw_decompose,
    iterate,
    martingale_defect,
    node_projection,
    norms_json,
    picard_step,
    solution_table,
    solve,
    star_norm,
    stochastic_integral_increments,
    zero_solution,
)


def linear_data(n, lam=0.5):
    return build_deterministic_data(n, generator=make_generator("linear-y", lam=lam))


class TestProjection(unittest.TestCase):

    def test_backward_project_is_a_martingale(self):
        data = build_random_walk_data(3, g=lambda xc, xj: xc[:, 0] ** 3)
        M = backward_project(data, data.xi)
        self.assertLess(martingale_defect(data, M), 1e-14)
        self.assertAlmostEqual(float(M.root[0]), 0.0)

    def test_wrong_leaf_count(self):
        data = build_random_walk_data(2)
        with self.assertRaises(LabError):
            backward_project(data, np.zeros(3))


class TestDecomposition(unittest.TestCase):

    def test_brownian_coefficient(self):
        data = build_random_walk_data(1, T=0.25, g=lambda xc, xj: 2.0 * xc[:, 0])
        dec = gkw_decompose(backward_project(data, data.xi), data)
        self.assertAlmostEqual(float(dec.Z[0][0, 0, 0]), 2.0)
        self.assertLess(dec.residual, 1e-12)

    def test_jump_coefficient(self):
        data = build_random_walk_data(1, sigma=0.0, jump_intensity=0.25, g=lambda xc, xj: xj[:, 0])
        dec = gkw_decompose(backward_project(data, data.xi), data)
        self.assertAlmostEqual(float(dec.U[0][0, 0, 0]), 1.0)
        np.testing.assert_allclose(dec.dN[1], 0.0, atol=1e-12)

    def test_rejects_non_martingales(self):
        data = build_deterministic_data(1)
        with self.assertRaises(NotMartingaleError):
            gkw_decompose(AdaptedProcess([np.zeros((1, 1)), np.ones((1, 1))]), data)

    def test_orthogonality_on_random_trees(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            data = build_random_tree_data(rng, depth=3, ell=2, m=2, n_marks=2)
            S = picard_step(data, zero_solution(data))
            self.assertLess(S.residual, 1e-10)
            self.assertLess(martingale_defect(data, S.M), 1e-12)
            probs = data.tree.node_probabilities
            for i in range(1, data.n + 1):
                dM = S.M.levels[i] - data.tree.down(i, S.M.levels[i - 1])
                dI = stochastic_integral_increments(data, S, i)
                lhs = float((probs[i] * (dM ** 2).sum(axis=1)).sum())
                rhs = float((probs[i] * (dI ** 2).sum(axis=1)).sum() + (probs[i] * (S.dN[i] ** 2).sum(axis=1)).sum())
                self.assertAlmostEqual(lhs, rhs, places=10)

    def test_rank_deficient_nodes_get_the_minimum_norm_fit(self):
        # two branches in R^2: the centred increments span a line
        tree = ScenarioTree(
            np.array([0.0, 1.0]),
            [np.zeros(0), np.array([0, 0])],
            [np.zeros(0), np.array([0.5, 0.5])],
            [np.zeros(0), np.array([[1.0, 2.0], [-1.0, -2.0]])],
            [np.zeros(0), np.array([-1, -1])],
        )
        phi = np.array([[1.0, 2.0], [-1.0, -2.0]])
        dM = np.array([[3.0], [-3.0]])
        coef, fitted = node_projection(tree, 1, phi, dM)
        np.testing.assert_allclose(fitted, dM, atol=1e-14)
        np.testing.assert_allclose(coef[0, 0], [0.6, 1.2], atol=1e-14)


@pytest.mark.slow
class TestOrthogonalityOnDeepTrees(unittest.TestCase):
    """Many random trees of depth 1 to 6, including rank-deficient nodes."""

    def test_residual_stays_at_rounding_level(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            depth = int(rng.integers(1, 7))
            data = build_random_tree_data(rng, depth=depth, m=2, n_marks=2)
            S = picard_step(data, zero_solution(data))
            worst = max(worst, S.residual)
            probs = data.tree.node_probabilities
            for i in range(1, data.n + 1):
                dM = S.M.levels[i] - data.tree.down(i, S.M.levels[i - 1])
                lhs = float((probs[i] * (dM ** 2).sum(axis=1)).sum())
                fit = float((probs[i] * ((dM - S.dN[i]) ** 2).sum(axis=1)).sum())
                orth = float((probs[i] * (S.dN[i] ** 2).sum(axis=1)).sum())
                self.assertLess(abs(lhs - fit - orth), 1e-9 * (1.0 + lhs))
        self.assertLess(worst, 1e-10)


class TestPicard(unittest.TestCase):

    def test_first_two_iterates(self):
        data = linear_data(2)
        first, second = list(iterate(data, 2))
        np.testing.assert_allclose([lv[0, 0] for lv in first.Y.levels], [1.0, 1.0, 1.0])
        np.testing.assert_allclose([lv[0, 0] for lv in second.Y.levels], [1.5, 1.25, 1.0])
        self.assertEqual(second.p, 2)

    def test_fixed_point_left_convention(self):
        res = solve(linear_data(2))
        self.assertTrue(res.converged)
        self.assertAlmostEqual(float(res.solution.Y.root[0]), 16.0 / 9.0, places=10)
        self.assertAlmostEqual(float(res.solution.Y.levels[1][0, 0]), 4.0 / 3.0, places=10)
        self.assertFalse(res.certified)

    def test_fixed_point_right_convention(self):
        res = solve(linear_data(2), convention="Y_right")
        self.assertAlmostEqual(float(res.solution.Y.root[0]), 1.5625, places=10)

    def test_unknown_convention(self):
        with self.assertRaises(LabError):
            list(iterate(linear_data(2), 1, convention="Y_middle"))

    def test_zero_generator_stops_after_one_step(self):
        data = build_random_walk_data(3, g=lambda xc, xj: xc[:, 0] ** 2)
        res = solve(data)
        self.assertTrue(res.converged)
        self.assertEqual(res.solution.p, 1)
        self.assertAlmostEqual(float(res.solution.Y.root[0]), 1.0)

    def test_certified_envelope(self):
        data = linear_data(100)
        cert = certify(1024.0, data.Phi)
        self.assertTrue(cert.passes_quarter)
        res = solve(data, cert, max_p=12)
        self.assertTrue(res.certified)
        self.assertTrue(res.envelope_ok)
        self.assertTrue(all(r <= 0.5 for r in res.gap_ratios))
        payload = res.to_dict()
        self.assertEqual(payload["beta"], 1024.0)

    def test_discretization_error(self):
        lam = 0.5
        for convention in ("Y_left", "Y_right"):
            res = solve(linear_data(100, lam), convention=convention)
            err = abs(float(res.solution.Y.root[0]) - np.exp(lam))
            self.assertLess(abs(err - lam ** 2 * np.exp(lam) / 200.0), 1e-4, convention)


class TestNorms(unittest.TestCase):

    def test_star_norm_deterministic(self):
        data = linear_data(2)
        S = solve(data).solution
        record = star_norm(S, data)
        self.assertAlmostEqual(record.y, (16.0 / 9.0) ** 2, places=9)
        self.assertEqual(record.z, 0.0)
        self.assertEqual(record.log_scale, 0.0)

    def test_normalized_weights(self):
        data = linear_data(2)
        S = solve(data).solution
        plain = star_norm(S, data, beta=2.0)
        scaled = star_norm(S, data, beta=2.0, normalized=True)
        self.assertAlmostEqual(scaled.log_scale, 0.5)
        self.assertAlmostEqual(scaled.total * np.exp(scaled.log_scale), plain.total, places=10)
        self.assertIn('"log_scale"', norms_json(scaled))

    def test_z_part_of_a_walk(self):
        data = build_random_walk_data(2, g=lambda xc, xj: xc[:, 0])
        S = solve(data).solution
        self.assertAlmostEqual(star_norm(S, data).z, 1.0)

    def test_gamma_functional(self):
        data = linear_data(2)
        S = solve(data).solution
        stats = gamma_functional(data, S)
        self.assertAlmostEqual(stats.mean, 0.5 * ((16.0 / 9.0) ** 2 + (4.0 / 3.0) ** 2), places=9)
        self.assertGreater(stats.moment, 0.0)


class TestBrackets(unittest.TestCase):

    def test_walk_brackets(self):
        data = build_random_walk_data(2, g=lambda xc, xj: xc[:, 0])
        S = solve(data).solution
        bset = brackets(S, data)
        self.assertEqual(set(bset.square), set(SQUARE_BRACKETS))
        self.assertEqual(set(bset.angle), set(ANGLE_BRACKETS))
        np.testing.assert_allclose(bset.terminal("[Y]"), 1.0)
        np.testing.assert_allclose(bset.terminal("<Y>"), 1.0)
        np.testing.assert_allclose(bset.terminal("[Y,Xc]"), 1.0)
        np.testing.assert_allclose(bset.terminal("<Z.Xc>"), 1.0)
        np.testing.assert_allclose(bset.terminal("[N]"), 0.0, atol=1e-24)
        expected = bset.expected_terminal(data)
        self.assertAlmostEqual(float(expected["[Y]"][0]), float(expected["<Y>"][0]))


class TestExport(unittest.TestCase):

    def test_solution_table(self):
        data = build_random_walk_data(2, jump_intensity=0.5, g=lambda xc, xj: xc[:, 0] + xj[:, 0])
        S = solve(data).solution
        frame = solution_table(S, data)
        self.assertEqual(len(frame), sum(data.tree.level_sizes))
        self.assertIn("Z0_0", frame.columns)
        self.assertIn("U0_m0", frame.columns)
        self.assertTrue(frame[frame["level"] == data.n]["Z0_0"].isna().all())



def test_picard_residual_on_a_seeded_tree(rng):
    data = build_random_tree_data(rng, depth=3, ell=1, m=2, n_marks=1)
    S = picard_step(data, zero_solution(data))
    assert S.residual < 1e-10
    assert martingale_defect(data, S.M) < 1e-12


if __name__ == '__main__':
    unittest.main()
