#!/usr/bin/env python3
"""
Tests for the safeguarded gradient descent and the multistart driver.
"""

import time
import unittest
from unittest.mock import patch

import numpy as np
from numpy.testing import assert_array_equal
from pydantic import ValidationError

from analysis import check_stationarity
from cqf_errors import AllStartsFailed, NotHurwitz, StepCollapse
from filter_model import CostSpec, CQFModel, Dims, ObserverSpec, PlantSpec, random_instance
from filter_schema import OptimizerConfig
from matops import BJ
from optimizer import Status, barzilai_borwein, multistart, optimize
from weyl import weyl_scan

SEED_ONE_DIMS = Dims(4, 2, 4, 2, 2)


def disconnected_model(r=None, N2=None):
    plant = PlantSpec(n=2, m=2, Theta=BJ, R=np.eye(2), N=np.eye(2))
    obs = ObserverSpec(
        nu=2,
        p=2,
        mu=2,
        vartheta=BJ,
        r=np.zeros((2, 2)) if r is None else r,
        N1=np.zeros((2, 2)),
        N2=np.eye(2) if N2 is None else N2,
        Pi=np.eye(2),
    )
    return CQFModel(plant, obs, CostSpec(F=np.eye(2), G=np.zeros((2, 2))))


class TestOptimizerConfig(unittest.TestCase):
    """Test cases for optimizer settings validation."""

    def test_defaults(self):
        config = OptimizerConfig()
        self.assertEqual(config.max_iters, 100000)
        self.assertEqual(config.grad_tol, 1e-8)
        self.assertEqual(config.armijo_c1, 1e-4)
        self.assertEqual(config.backtrack, 0.5)

    def test_invalid_settings(self):
        for field, value in [("armijo_c1", 1.5), ("backtrack", 0.0), ("grad_tol", -1.0), ("trace_every", 0)]:
            with self.subTest(field=field):
                with self.assertRaises(ValidationError):
                    OptimizerConfig(**{field: value})


class TestOptimize(unittest.TestCase):
    """Test cases for single-start descent."""

    def setUp(self):
        self.config = OptimizerConfig(max_iters=20000, trace_every=1)

    def test_stationary_start_returns_immediately(self):
        """Test that N1 = 0, G = 0 converges with zero iterations."""
        result = optimize(disconnected_model(), self.config)
        self.assertEqual(result.status, Status.CONVERGED)
        self.assertEqual(result.trace.iterations, 0)
        self.assertEqual(len(result.trace.records), 1)
        self.assertTrue(result.verdict.stationary)

    def test_unstable_start_rejected(self):
        """Test that a non-Hurwitz initial observer raises NotHurwitz."""
        with self.assertRaises(NotHurwitz):
            optimize(disconnected_model(N2=np.zeros((2, 2))), self.config)

    def test_descent_on_seed_one(self):
        """Test convergence, monotone cost, stability and symmetry along the seed-1 run."""
        model = random_instance(1, SEED_ONE_DIMS)
        result = optimize(model, self.config)
        records = result.trace.records

        self.assertEqual(result.status, Status.CONVERGED)
        self.assertGreater(result.trace.iterations, 0)
        costs = [record.cost for record in records]
        for before, after in zip(costs, costs[1:]):
            self.assertLess(after, before)
        for record in records:
            self.assertLess(record.spectral_abscissa, -self.config.hurwitz_margin)
        self.assertLess(records[-1].grad_norm, records[0].grad_norm)
        self.assertLess(result.cost, records[0].cost)
        self.assertAlmostEqual(records[-1].cost, result.cost, delta=1e-9 * (1.0 + result.cost))

        r = result.model.observer.r
        assert_array_equal(r, r.T)
        assert_array_equal(result.model.observer.N2, model.observer.N2)
        assert_array_equal(result.model.observer.vartheta, model.observer.vartheta)

        scale = 1.0 + abs(result.cost)
        self.assertLessEqual(result.report.grad_norm, self.config.grad_tol * scale)
        self.assertTrue(check_stationarity(result.report, 1e-6).stationary)
        self.assertTrue(weyl_scan(result.model, samples=1000, radius=3.0).passes(1e-6))

        # moving off the stationary point makes the Hamiltonian derivatives visible
        obs = result.model.observer
        shifted = result.model.with_observer(obs.with_parameters(r=obs.r + 0.1 * np.eye(4)))
        self.assertGreater(weyl_scan(shifted, samples=1000, radius=3.0).max_dK, 1e-4 * scale)

    def test_ten_seeds_converge(self):
        """Test that ten random instances reach verified stationary points within a minute."""
        elapsed = 0.0
        for seed in range(10):
            with self.subTest(seed=seed):
                started = time.perf_counter()
                result = optimize(random_instance(seed, SEED_ONE_DIMS), OptimizerConfig(max_iters=20000))
                elapsed += time.perf_counter() - started
                self.assertEqual(result.status, Status.CONVERGED)
                scale = 1.0 + abs(result.cost)
                self.assertLessEqual(result.verdict.stat1_norm, 1e-6 * scale)
                self.assertLessEqual(result.verdict.stat2_norm, 1e-6 * scale)
                self.assertTrue(weyl_scan(result.model, samples=1000, radius=3.0).passes(1e-6))

                obs = result.model.observer
                shifted = result.model.with_observer(obs.with_parameters(r=obs.r + 0.1 * np.eye(4)))
                self.assertGreater(weyl_scan(shifted, samples=1000, radius=3.0).max_dK, 1e-4 * scale)
        self.assertLess(elapsed, 60.0)

    def test_expand_rule_still_descends(self):
        """Test that the step-growth rule also lowers the cost."""
        config = OptimizerConfig(max_iters=200, step_rule="expand", trace_every=50)
        result = optimize(random_instance(1, SEED_ONE_DIMS), config)
        records = result.trace.records
        self.assertLess(records[-1].cost, records[0].cost)
        self.assertEqual(result.trace.iterations, records[-1].iter)

    def test_trace_every_thins_records(self):
        config = OptimizerConfig(max_iters=25, trace_every=10)
        result = optimize(random_instance(1, SEED_ONE_DIMS), config)
        iters = [record.iter for record in result.trace.records]
        self.assertEqual(iters[0], 0)
        self.assertEqual(iters[-1], result.trace.iterations)
        self.assertTrue(all(i % 10 == 0 for i in iters[1:-1]))

    def test_max_iters_zero(self):
        result = optimize(random_instance(1, SEED_ONE_DIMS), OptimizerConfig(max_iters=0))
        self.assertEqual(result.status, Status.MAX_ITERS)
        self.assertFalse(result.verdict.stationary)

    def test_step_collapse(self):
        """Test that an empty step range raises StepCollapse with the partial result."""
        config = OptimizerConfig(init_step=1e-3, min_step=1.0)
        with self.assertRaises(StepCollapse) as ctx:
            optimize(random_instance(1, SEED_ONE_DIMS), config)
        self.assertEqual(ctx.exception.result.status, Status.STEP_COLLAPSE)
        self.assertEqual(ctx.exception.exit_code, 2)


class TestBarzilaiBorwein(unittest.TestCase):
    """Test cases for the Barzilai-Borwein trial step."""

    def setUp(self):
        self.s = (np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 1.0]]))
        # gradient change of the quadratic with Hessian diag(2, 8)
        self.y = (2.0 * self.s[0], 8.0 * self.s[1])

    def test_long_and_short_steps(self):
        """Test s.s / s.y = 2/10 on even and s.y / y.y = 10/68 on odd iterations."""
        self.assertAlmostEqual(barzilai_borwein(self.s, self.y, 0), 0.2, places=15)
        self.assertAlmostEqual(barzilai_borwein(self.s, self.y, 1), 10.0 / 68.0, places=15)

    def test_inverse_curvature_of_a_scalar_quadratic(self):
        s = (np.array([[0.5]]), np.zeros((1, 1)))
        y = (np.array([[2.0]]), np.zeros((1, 1)))
        self.assertAlmostEqual(barzilai_borwein(s, y, 0), 0.25, places=15)
        self.assertAlmostEqual(barzilai_borwein(s, y, 1), 0.25, places=15)

    def test_no_curvature(self):
        negative = (-self.y[0], -self.y[1])
        self.assertIsNone(barzilai_borwein(self.s, negative, 0))
        zero = (np.zeros((2, 2)), np.zeros((1, 2)))
        self.assertIsNone(barzilai_borwein(self.s, zero, 1))


class TestMultistart(unittest.TestCase):
    """Test cases for the multistart driver."""

    def test_single_start_matches_optimize(self):
        model = disconnected_model()
        outcome = multistart(model, OptimizerConfig(), starts=1, seed=0)
        self.assertEqual(outcome.best_index, 0)
        self.assertEqual(len(outcome.summaries), 1)
        self.assertEqual(outcome.best.cost, optimize(model).cost)

    def test_best_is_minimal_and_deterministic(self):
        """Test (cost, index) selection over starts of an observer-independent cost."""
        model = disconnected_model()
        first = multistart(model, OptimizerConfig(max_iters=1000), starts=4, seed=3)
        second = multistart(model, OptimizerConfig(max_iters=1000), starts=4, seed=3)
        self.assertEqual(first.summaries, second.summaries)
        converged = [s for s in first.summaries if s.status == "Converged"]
        self.assertTrue(converged)
        for summary in converged:
            self.assertLessEqual(first.best.cost, summary.cost)
        self.assertTrue(check_stationarity(first.best.report, 1e-6).stationary)

    def test_all_random_starts(self):
        """Test that without the given observer start 0 is a seeded random draw."""
        model = disconnected_model()
        with patch("optimizer.optimize", wraps=optimize) as wrapped:
            outcome = multistart(model, OptimizerConfig(), starts=2, seed=5, include_given=False)
        self.assertEqual(len(outcome.summaries), 2)
        first_start = wrapped.call_args_list[0][0][0].observer
        self.assertFalse(np.array_equal(first_start.r, model.observer.r))
        assert_array_equal(first_start.N2, model.observer.N2)

        with patch("optimizer.optimize", wraps=optimize) as wrapped:
            multistart(model, OptimizerConfig(), starts=2, seed=5)
        self.assertIs(wrapped.call_args_list[0][0][0], model)

    def test_all_starts_failed(self):
        config = OptimizerConfig(max_iters=0)
        with self.assertRaises(AllStartsFailed):
            multistart(random_instance(1, SEED_ONE_DIMS), config, starts=2, seed=0)


if __name__ == "__main__":
    unittest.main(verbosity=2)
