#!/usr/bin/env python3
"""
Tests for the command line front end: exit codes, reports and the
random -> validate -> analyze pipeline.
"""

import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stdout
from unittest.mock import patch

import numpy as np

from coherent_filter import EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, EXIT_VERIFICATION, run
from filter_model import CostSpec, CQFModel, ObserverSpec, PlantSpec, dump_model
from filter_schema import SCHEMA_VERSION, RunReport
from matops import BJ


def hand_model(N2=None):
    plant = PlantSpec(n=2, m=2, Theta=BJ, R=np.eye(2), N=np.eye(2))
    obs = ObserverSpec(
        nu=2,
        p=2,
        mu=2,
        vartheta=BJ,
        r=np.zeros((2, 2)),
        N1=np.zeros((2, 2)),
        N2=np.eye(2) if N2 is None else N2,
        Pi=np.eye(2),
    )
    return CQFModel(plant, obs, CostSpec(F=np.eye(2), G=np.zeros((2, 2))))


class CLITestCase(unittest.TestCase):
    """Shared temporary directory and helpers."""

    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        self.seed_one = self.path("seed1.json")
        self.assertEqual(
            run(["random", "--dims", "4,2,4,2,2", "--seed", "1", "--out", self.seed_one]),
            EXIT_OK,
        )

    def tearDown(self):
        self.tmpdir.cleanup()

    def path(self, name):
        return os.path.join(self.tmpdir.name, name)

    def write_model(self, name, model):
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(dump_model(model))
        return path

    def read(self, path):
        with open(path, encoding="utf-8") as f:
            return f.read()

    def run_report(self, *argv):
        """Run a command with --out and return (exit code, parsed report)."""
        out = self.path("report.json")
        if os.path.exists(out):
            os.remove(out)
        code = run(list(argv) + ["--out", out, "--no-timing"])
        report = json.loads(self.read(out)) if os.path.exists(out) else None
        return code, report


class TestReports(CLITestCase):
    """Test cases for report content and determinism."""

    def test_random_then_validate(self):
        code, report = self.run_report("validate", self.seed_one)
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(report["outputs"]["valid"])
        self.assertEqual(report["outputs"]["violations"], [])
        self.assertEqual(report["versions"]["schema"], SCHEMA_VERSION)
        RunReport.model_validate(report)

    def test_random_is_deterministic(self):
        other = self.path("again.json")
        run(["random", "--dims", "4,2,4,2,2", "--seed", "1", "--out", other])
        self.assertEqual(self.read(other), self.read(self.seed_one))

    def test_seed_from_environment(self):
        """Test that CQF_SEED stands in for a missing --seed flag."""
        other = self.path("env.json")
        with patch.dict(os.environ, {"CQF_SEED": "1"}):
            run(["random", "--dims", "4,2,4,2,2", "--out", other])
        self.assertEqual(self.read(other), self.read(self.seed_one))

    def test_grad_reports_are_byte_identical(self):
        first = self.path("first.json")
        second = self.path("second.json")
        run(["grad", self.seed_one, "--no-timing", "--out", first])
        run(["grad", self.seed_one, "--no-timing", "--out", second])
        self.assertEqual(self.read(first), self.read(second))
        report = json.loads(self.read(first))
        self.assertIsNone(report["timing"])
        self.assertEqual(report["command"], "grad")
        self.assertEqual(len(report["outputs"]["dZ_dr"]), 4)

    def test_report_on_stdout(self):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            code = run(["cost", self.seed_one])
        self.assertEqual(code, EXIT_OK)
        report = RunReport.model_validate_json(buffer.getvalue())
        self.assertIn("load", report.timing)
        self.assertGreater(report.outputs["cost"], 0.0)

    def test_derive_and_cost_of_hand_model(self):
        path = self.write_model("hand.json", hand_model())
        code, report = self.run_report("derive", path)
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(report["outputs"]["A"], [[-2.0, 2.0], [-2.0, -2.0]])
        self.assertLessEqual(report["outputs"]["ccr_residual_norm"], 1e-12)

        code, report = self.run_report("cost", path)
        self.assertEqual(code, EXIT_OK)
        self.assertAlmostEqual(report["outputs"]["cost"], 2.0, places=12)
        self.assertAlmostEqual(report["outputs"]["uncertainty_margin"], 0.0, places=12)


class TestExitCodes(CLITestCase):
    """Test cases for the exit code contract."""

    def test_odd_dimension(self):
        self.assertEqual(run(["random", "--dims", "4,3,4,2,2", "--out", self.path("x.json")]), EXIT_INPUT)

    def test_malformed_dims(self):
        self.assertEqual(run(["random", "--dims", "4,2,4"]), EXIT_INPUT)

    def test_missing_file(self):
        self.assertEqual(run(["grad", self.path("missing.json")]), EXIT_INPUT)

    def test_invalid_spec(self):
        """Test that an asymmetric energy matrix fails validation and analysis."""
        document = json.loads(self.read(self.seed_one))
        document["plant"]["R"][0][1] += 1.0
        path = self.path("bad.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(document, f)

        code, report = self.run_report("validate", path)
        self.assertEqual(code, EXIT_INPUT)
        self.assertFalse(report["outputs"]["valid"])
        self.assertTrue(any("plant.R" in v for v in report["outputs"]["violations"]))
        self.assertEqual(run(["cost", path]), EXIT_INPUT)

    def test_not_hurwitz(self):
        path = self.write_model("unstable.json", hand_model(N2=np.zeros((2, 2))))
        self.assertEqual(run(["cost", path]), EXIT_NUMERICAL)

    def test_weyl_scan_strict(self):
        """Test that a non-stationary observer fails the strict scan."""
        code, report = self.run_report("weyl-scan", self.seed_one, "--samples", "100")
        self.assertEqual(code, EXIT_OK)
        self.assertFalse(report["outputs"]["passed"])
        code, _ = self.run_report("weyl-scan", self.seed_one, "--samples", "100", "--strict")
        self.assertEqual(code, EXIT_VERIFICATION)

    def test_check_strict(self):
        code, report = self.run_report("check", self.seed_one, "--tol", "1e-6", "--strict")
        self.assertEqual(code, EXIT_VERIFICATION)
        self.assertEqual(report["outputs"]["verdict"], "not_stationary")

    def test_fd_check(self):
        code, report = self.run_report("fd-check", self.seed_one, "--h", "1e-6", "--strict")
        self.assertEqual(code, EXIT_OK)
        self.assertLessEqual(report["outputs"]["max_rel_err_fd"], 1e-5)
        self.assertLessEqual(report["outputs"]["max_rel_err_sensitivity"], 1e-9)


class TestOptimizePipeline(CLITestCase):
    """Test cases for optimize followed by the verification commands."""

    def test_optimize_then_verify(self):
        config = self.path("config.json")
        with open(config, "w", encoding="utf-8") as f:
            json.dump({"max_iters": 20000, "trace_every": 100}, f)
        optimized = self.path("optimized.json")

        code, report = self.run_report(
            "optimize", self.seed_one, "--config", config, "--model-out", optimized
        )
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(report["outputs"]["status"], "Converged")
        self.assertEqual(report["outputs"]["verdict"], "stationary")
        self.assertEqual(self.run_report("validate", optimized)[0], EXIT_OK)

        code, report = self.run_report("check", optimized, "--tol", "1e-6", "--strict")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(report["outputs"]["verdict"], "stationary")
        code, _ = self.run_report("weyl-scan", optimized, "--strict")
        self.assertEqual(code, EXIT_OK)

    def test_margin_reaches_optimizer_config(self):
        """Test that --hurwitz-margin applies unless the config file sets its own."""
        config = self.path("config.json")
        with open(config, "w", encoding="utf-8") as f:
            json.dump({"max_iters": 0}, f)
        _, report = self.run_report(
            "optimize", self.seed_one, "--config", config, "--hurwitz-margin", "1e-3"
        )
        self.assertEqual(report["outputs"]["config"]["hurwitz_margin"], 1e-3)

        with patch.dict(os.environ, {"CQF_HURWITZ_MARGIN": "1e-4"}):
            _, report = self.run_report("optimize", self.seed_one, "--config", config)
        self.assertEqual(report["outputs"]["config"]["hurwitz_margin"], 1e-4)

        with open(config, "w", encoding="utf-8") as f:
            json.dump({"max_iters": 0, "hurwitz_margin": 1e-5}, f)
        _, report = self.run_report(
            "optimize", self.seed_one, "--config", config, "--hurwitz-margin", "1e-3"
        )
        self.assertEqual(report["outputs"]["config"]["hurwitz_margin"], 1e-5)

    def test_random_starts_flag(self):
        """Test that --random-starts replaces the file's observer by a seeded draw."""
        path = self.write_model("hand.json", hand_model())
        code, report = self.run_report("optimize", path, "--starts", "1", "--seed", "2", "--random-starts")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(report["outputs"]["starts"]), 1)
        self.assertNotEqual(report["outputs"]["observer"]["r"], [[0.0, 0.0], [0.0, 0.0]])

    def test_multistart_summaries(self):
        path = self.write_model("hand.json", hand_model())
        code, report = self.run_report("optimize", path, "--starts", "3", "--seed", "1")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(report["outputs"]["starts"]), 3)
        self.assertEqual(report["outputs"]["status"], "Converged")
        self.assertEqual(report["inputs"]["seed"], 1)

    def test_bad_config(self):
        config = self.path("config.json")
        with open(config, "w", encoding="utf-8") as f:
            json.dump({"armijo_c1": 2.0}, f)
        self.assertEqual(run(["optimize", self.seed_one, "--config", config]), EXIT_INPUT)


if __name__ == "__main__":
    unittest.main(verbosity=2)
