"""
Test the HTTP endpoints by calling them directly.
"""

import unittest
import sys
import os
import asyncio

import pytest

# Add the repository root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

pytest.importorskip("fastapi")

from fastapi import HTTPException

from tools import lab_api_server as api
from tools.measures import FiniteMeasure
from tools.paths import StepPath


def _call(coro):
    return asyncio.run(coro)


class TestInfoEndpoints(unittest.TestCase):

    def test_root_and_health(self):
        info = _call(api.root())
        self.assertEqual(info["health"], "/health")
        health = _call(api.health_check())
        self.assertEqual(health.status, "healthy")


class TestConstantsEndpoints(unittest.TestCase):

    def test_m_star(self):
        response = _call(api.constants_m_star(beta=1024.0, phi=0.0025))
        self.assertTrue(response.passes_quarter)
        self.assertGreater(response.m_star, 0.0)
        self.assertTrue(response.delta_confirmed)
        self.assertGreaterEqual(response.grid_m_star, response.m_star)

    def test_m_star_domain_error(self):
        with self.assertRaises(HTTPException) as ctx:
            _call(api.constants_m_star(beta=1.0, phi=-1.0))
        self.assertEqual(ctx.exception.status_code, 400)

    def test_k_star(self):
        request = api.KStarRequest(phi_seq=[0.5, 0.1, 0.0025, 0.001], beta_hat=1024.0, labels=[1, 2, 3, 4])
        result = _call(api.constants_k_star(request))
        self.assertEqual(result["label"], 3)

    def test_k_star_failing_tail(self):
        request = api.KStarRequest(phi_seq=[0.001, 0.5], beta_hat=1024.0)
        with self.assertRaises(HTTPException) as ctx:
            _call(api.constants_k_star(request))
        self.assertEqual(ctx.exception.status_code, 400)


class TestDistanceEndpoints(unittest.TestCase):

    def test_j1(self):
        request = api.PathPairRequest(
            a=StepPath.indicator(1.0, 2.0).to_text(),
            b=StepPath.indicator(1.1, 2.0).to_text(),
            window=2.0,
        )
        response = _call(api.metrics_j1(request))
        self.assertAlmostEqual(response.value, 0.1, places=12)

    def test_j1_window_too_long(self):
        text = StepPath.constant(1.0, T=1.0).to_text()
        with self.assertRaises(HTTPException) as ctx:
            _call(api.metrics_j1(api.PathPairRequest(a=text, b=text, window=2.0)))
        self.assertEqual(ctx.exception.status_code, 400)

    def test_ks_and_interval(self):
        mu = FiniteMeasure.atomic([5.0], [1.0]).to_text()
        nu = FiniteMeasure.atomic([4.0], [1.0]).to_text()
        response = _call(api.metrics_ks(api.MeasurePairRequest(mu=mu, nu=nu)))
        self.assertEqual(response.metric, "ks")
        self.assertAlmostEqual(response.value, 1.0)
        with self.assertRaises(HTTPException) as ctx:
            _call(api.metrics_ks(api.MeasurePairRequest(mu=mu, nu=nu, interval=True)))
        self.assertEqual(ctx.exception.status_code, 400)


class TestMooreOsgoodEndpoint(unittest.TestCase):

    def test_separable_table(self):
        grid = list(range(1, 51))
        entries = [[1.0 / k + 1.0 / p for p in grid] for k in grid]
        request = api.MooreOsgoodRequest(entries=entries, ks=grid, ps=grid)
        verdict = _call(api.limits_mo_check(request))
        self.assertTrue(verdict["passed"])


class TestExperimentEndpoint(unittest.TestCase):

    def test_small_experiment(self):
        doc = _call(api.run_experiment({"problem": "ode-limit", "lambda": 0.5, "k_list": [2, 4, 8], "p_max": 3}))
        self.assertEqual(doc["ks"], [2, 4, 8])
        self.assertIn("report", doc)

    def test_limits_apply(self):
        with self.assertRaises(HTTPException) as ctx:
            _call(api.run_experiment({"k_list": [4, 8, 100000]}))
        self.assertEqual(ctx.exception.status_code, 400)

    def test_invalid_config(self):
        with self.assertRaises(HTTPException) as ctx:
            _call(api.run_experiment({"k_list": [4, 2, 1]}))
        self.assertEqual(ctx.exception.status_code, 400)


if __name__ == '__main__':
    unittest.main()
