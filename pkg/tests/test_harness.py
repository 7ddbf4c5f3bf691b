"""
Test the doubly-indexed experiment: tree and Monte Carlo rows, the
convergence table, Moore-Osgood wiring and report emission.
"""

import unittest
import sys
import os
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Add the repository root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from tools.config import ExperimentConfig
from tools.errors import DimensionMismatchError, LabError, UnknownProblemError
from tools.harness import (
    METRICS,
    ConvergenceTable,
    distance_estimators,
    emit_report,
    load_table_csv,
    run_row,
    sample_paths,
    stability_experiment,
)
from tools.references import reference_problem


def _config(**overrides) -> ExperimentConfig:
    doc = {"k_list": [2, 4, 8], "p_max": 3, "n_paths": 400, "j1_paths": 40, "seed": 11}
    doc.update(overrides)
    return ExperimentConfig.model_validate(doc)


class TestTreeRows(unittest.TestCase):
    """Rows solved on the full scenario tree."""

    @classmethod
    def setUpClass(cls):
        cls.config = _config(problem="linear-lambda", **{"lambda": 0.5})
        cls.table = stability_experiment(cls.config)

    def test_shape_and_modes(self):
        self.assertEqual(self.table.shape, (3, 4))
        self.assertEqual(self.table.ks, [2, 4, 8])
        self.assertEqual([r.mode for r in self.table.rows], ["tree"] * 3)

    def test_y0_matches_closed_form(self):
        problem = reference_problem("linear-lambda", lam=0.5)
        for row in self.table.rows:
            self.assertAlmostEqual(row.y0, problem.y0_discrete(row.k), places=8)
            self.assertAlmostEqual(row.y0_limit, np.exp(0.5), places=12)

    def test_picard_gap_column(self):
        gaps = self.table.cells["picard_gap"]
        np.testing.assert_array_equal(gaps[:, -1], 0.0)
        self.assertTrue(np.all(np.diff(gaps[:, :-1], axis=1) <= 1e-15))

    def test_walk_has_no_orthogonal_part(self):
        self.assertLess(float(self.table.cells["orthogonal_n"].max()), 1e-20)

    def test_report_layout(self):
        report = self.table.report()
        for key in ("paths", "square_brackets", "angle_brackets", "orthogonal_n", "y0_error", "gamma_ui", "moore_osgood"):
            self.assertIn(key, report)
        self.assertEqual(len(report["y0_error"]), 3)
        self.assertEqual(len(self.table.verdicts), 2 * len(METRICS))


class TestSquarePayoff(unittest.TestCase):
    """For g(x) = x² the discrete fixed point is the limit on the grid."""

    def test_tree_and_monte_carlo_rows(self):
        config = _config(problem="martingale-g", k_list=[2, 4, 32], exact_cutoff=4)
        table = stability_experiment(config)
        self.assertEqual([r.mode for r in table.rows], ["tree", "tree", "monte-carlo"])
        for metric in ("path_j1", "terminal_l2"):
            self.assertLess(float(np.abs(table.cells[metric][:, -1]).max()), 1e-18)
        for row in table.rows:
            self.assertAlmostEqual(row.y0, 1.0, places=10)

    def test_sampling_is_reproducible(self):
        problem = reference_problem("martingale-g")
        a = sample_paths(problem, 16, 300, seed=5, block_size=128)
        b = sample_paths(problem, 16, 300, seed=5, block_size=128)
        self.assertEqual(a.n_paths, 300)
        np.testing.assert_array_equal(a.xc, b.xc)


class TestMonteCarloRow(unittest.TestCase):

    def test_linear_row(self):
        config = _config(problem="linear-lambda", **{"lambda": 0.5, "exact_cutoff": 4})
        row = run_row(config, 32)
        self.assertEqual(row.mode, "monte-carlo")
        problem = reference_problem("linear-lambda", lam=0.5)
        self.assertAlmostEqual(row.y0, problem.y0_discrete(32), places=12)
        self.assertEqual(row.cells["picard_gap"][-1], 0.0)
        self.assertEqual(len(row.cells["path_j1"]), config.p_max + 1)
        again = run_row(config, 32)
        self.assertEqual(row.cells, again.cells)

    def test_jumps_beyond_the_tree_cutoff(self):
        config = _config(problem="martingale-g", jump_intensity=1.0)
        with self.assertRaises(LabError):
            run_row(config, 16)


class TestTable(unittest.TestCase):

    def test_empty_table(self):
        table = ConvergenceTable.empty(4)
        self.assertEqual(table.shape, (0, 5))
        self.assertEqual(table.run_moore_osgood(), {})
        self.assertFalse(table.passed)

    def test_unknown_problem_fails_early(self):
        with self.assertRaises(UnknownProblemError):
            stability_experiment({"problem": "bogus"})

    def test_distance_dimension_check(self):
        problem = reference_problem("martingale-g")
        bundle = sample_paths(problem, 4, 10, seed=1, block_size=10)
        other = sample_paths(problem, 4, 12, seed=1, block_size=12)
        with self.assertRaises(DimensionMismatchError):
            distance_estimators(problem.discrete_record(bundle, None), problem.limit_record(other), bundle)


class TestReports(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.table = stability_experiment(_config(problem="ode-limit", **{"lambda": 0.5}))

    def test_files_and_csv_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            written = emit_report(self.table, tmp)
            self.assertEqual(len(written), len(METRICS) + 2)
            self.assertTrue(all(p.exists() for p in written))
            loaded = load_table_csv(Path(tmp) / "convergence_picard_gap.csv")
            self.assertEqual(loaded.ks, [2, 4, 8])
            self.assertEqual(loaded.ps, [1, 2, 3])
            np.testing.assert_allclose(loaded.row_limits, self.table.cells["picard_gap"][:, -1])

    def test_reports_are_byte_stable(self):
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            first = emit_report(self.table, a)
            second = emit_report(stability_experiment(_config(problem="ode-limit", **{"lambda": 0.5})), b)
            for x, y in zip(first, second):
                self.assertEqual(x.read_bytes(), y.read_bytes())


def test_empty_table_report(temp_output_dir):
    written = emit_report(ConvergenceTable.empty(3), temp_output_dir, stem="empty")
    assert len(written) == len(METRICS) + 2
    assert "verdict: FAIL" in (temp_output_dir / "empty.txt").read_text()
    with pytest.raises(DimensionMismatchError):
        load_table_csv(temp_output_dir / "empty_picard_gap.csv")


@pytest.mark.slow
class TestCallExperiment(unittest.TestCase):
    """End to end on the call payoff with a sampled row."""

    def test_errors_shrink_with_k(self):
        config = _config(problem="martingale-g", payoff="call", k_list=[4, 16, 64], n_paths=4000, j1_paths=200)
        table = stability_experiment(config)
        errors = [r.y0_error for r in table.rows]
        self.assertTrue(errors[0] > errors[1] > errors[2])
        self.assertEqual(table.rows[-1].mode, "monte-carlo")
        self.assertLess(errors[-1], 2e-3)


if __name__ == '__main__':
    unittest.main()
