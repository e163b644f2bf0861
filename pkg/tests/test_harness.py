"""
Tests for experiment orchestration and the command-line interface.
"""

import json
import logging
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch

from click.testing import CliRunner

from fedbuff_validator.analysis import BoundInputs
from fedbuff_validator.cli import cli
from fedbuff_validator.config import Algorithm, load_experiment_config
from fedbuff_validator.harness import (
    BOUND_REPORT_FILE,
    MANIFEST_FILE,
    RATE_FIT_FILE,
    RATE_SLOPE_THRESHOLD,
    RESOLVED_CONFIG_FILE,
    SUMMARY_FILE,
    cell_name,
    experiment_fingerprint,
    load_experiment_dir,
    resolve_cells,
    run_cell,
    trace_diff,
)
from fedbuff_validator.logger import ColoredFormatter, FileFormatter, log_abort_diagnostic, setup_logger

CONFIGS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
MINIMAL = os.path.join(CONFIGS_DIR, "minimal.yaml")
ACCEPTANCE = os.path.join(CONFIGS_DIR, "acceptance_bound.yaml")
RATE_SWEEP = os.path.join(CONFIGS_DIR, "rate_sweep.yaml")

STRAGGLER_CONFIG = """
name: straggler
problem: {n: 2, d: 3, scale: 0.5, seed: 1, initial_model: [2.0, 2.0, 2.0]}
hyper: {Q: 1, eta: 0.05, beta: 1.0, K: 1}
sim:
  mode: EventDriven
  tau_max: 0
  horizon_T: 16
  delay_model: {download: [0.0], upload: [1.0, 2.0]}
"""

SLOW_TESTS_SKIPPED = bool(os.environ.get("FEDBUFF_SKIP_SLOW_TESTS"))


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


class CliTestCase(unittest.TestCase):
    """Runs the CLI inside a scratch directory."""

    def setUp(self):
        self.runner = CliRunner()
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        package_logger = logging.getLogger("fedbuff_validator")
        for handler in package_logger.handlers[:]:
            handler.close()
            package_logger.removeHandler(handler)
        shutil.rmtree(self.tmp, ignore_errors=True)

    def run_cli(self, *args, **kwargs):
        return self.runner.invoke(cli, list(args), **kwargs)

    def run_experiment(self, config_path, *overrides, out=None, jobs=1):
        out = out or os.path.join(self.tmp, "runs")
        args = ["run", "-c", config_path, "--out", out, "-j", str(jobs)]
        for override in overrides:
            args += ["-o", override]
        return self.run_cli(*args), out


class TestCellResolution(unittest.TestCase):
    """Test the expansion of an experiment into cells."""

    def test_cells_per_seed_and_horizon(self):
        config = load_experiment_config(MINIMAL, ["seeds=[3, 1]", "horizons=[8, 4]"])
        cells = resolve_cells(config)
        self.assertEqual([c.name for c in cells], [
            cell_name(Algorithm.FEDBUFF, 4, 3),
            cell_name(Algorithm.FEDBUFF, 4, 1),
            cell_name(Algorithm.FEDBUFF, 8, 3),
            cell_name(Algorithm.FEDBUFF, 8, 1),
        ])
        self.assertEqual(cells[0].name, "FedBuff_T4_seed3")
        self.assertEqual(cells[0].config["sim"]["n"], 2)
        self.assertEqual(len({c.fingerprint for c in cells}), 4)

    def test_auto_schedule_resolves_stepsizes(self):
        config = load_experiment_config(ACCEPTANCE, ["seeds=[0]"])
        (cell,) = resolve_cells(config)
        self.assertIsNotNone(cell.config["hyper"]["eta"])
        self.assertEqual(cell.config["hyper"]["beta"], 0.5)

    def test_fedavg_cells_carry_round_settings(self):
        config = load_experiment_config(MINIMAL, ["algorithm=FedAvgSync"])
        (cell,) = resolve_cells(config)
        self.assertEqual(cell.config["sync"]["clients_per_round"], 2)

    def test_fingerprint_tracks_config_changes(self):
        a = load_experiment_config(MINIMAL)
        b = load_experiment_config(MINIMAL, ["hyper.eta=0.2"])
        self.assertNotEqual(experiment_fingerprint(a), experiment_fingerprint(b))


class TestRunCell(unittest.TestCase):
    """Test the manifest entry a single cell produces."""

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_completed_cell_entry(self):
        (cell,) = resolve_cells(load_experiment_config(MINIMAL))
        entry = run_cell(cell, self.tmp)
        self.assertEqual(entry["name"], cell.name)
        self.assertEqual(entry["fingerprint"], cell.fingerprint)
        self.assertEqual(entry["status"], "ok")
        self.assertIsNone(entry["error"])
        self.assertEqual(entry["algorithm"], "FedBuff")
        self.assertEqual((entry["seed"], entry["horizon_T"], entry["rows"]), (0, 16, 16))
        self.assertEqual(len(entry["final_checksum"]), 64)
        self.assertEqual(entry["uploads"], entry["staleness"]["uploads"])
        self.assertNotIn("elapsed_seconds", entry["metadata"])
        self.assertEqual(len(entry["grad_norms"]), 16)

    def test_aborted_cell_entry(self):
        config_path = os.path.join(self.tmp, "straggler.yaml")
        with open(config_path, "w") as f:
            f.write(STRAGGLER_CONFIG)
        (cell,) = resolve_cells(load_experiment_config(config_path))
        entry = run_cell(cell, self.tmp)
        self.assertEqual(entry["status"], "aborted")
        self.assertEqual(entry["fingerprint"], cell.fingerprint)
        self.assertEqual(entry["error"]["name"], "staleness-violation")
        self.assertEqual(entry["error"]["exit_code"], 2)
        self.assertIsNone(entry["final_checksum"])
        self.assertEqual(entry["rows"], 2)
        self.assertEqual(entry["metadata"]["server_steps"], 1)
        self.assertIn(os.path.join("logs", "aborts", f"{cell.name}.json"), entry["files"])


class TestRunCommand(CliTestCase):
    """Test the run subcommand and its artifacts."""

    def test_minimal_run(self):
        result, out = self.run_experiment(MINIMAL)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("Artifacts written to", result.output)

        exp_dir = os.path.join(out, "minimal")
        with open(os.path.join(exp_dir, "cells", "FedBuff_T16_seed0.csv")) as f:
            lines = f.read().splitlines()
        self.assertEqual(len(lines), 17)
        self.assertTrue(lines[0].startswith("t,grad_norm_sq"))

        with open(os.path.join(exp_dir, MANIFEST_FILE)) as f:
            manifest = json.load(f)
        paths = {item["path"] for item in manifest["files"]}
        self.assertIn(RESOLVED_CONFIG_FILE, paths)
        self.assertIn(SUMMARY_FILE, paths)
        self.assertIn(os.path.join("cells", "FedBuff_T16_seed0.csv"), paths)
        self.assertIn(os.path.join("cells", "FedBuff_T16_seed0.jsonl"), paths)
        self.assertEqual(manifest["cells"][0]["status"], "ok")
        self.assertEqual(manifest["cells"][0]["rows"], 16)

        with open(os.path.join(exp_dir, SUMMARY_FILE)) as f:
            summary = json.load(f)
        self.assertIn("certificate", summary)
        self.assertIsNone(summary["bound_value"])

    def test_runs_are_reproducible(self):
        first, out_a = self.run_experiment(MINIMAL, out=os.path.join(self.tmp, "a"))
        second, out_b = self.run_experiment(MINIMAL, out=os.path.join(self.tmp, "b"))
        self.assertEqual((first.exit_code, second.exit_code), (0, 0))

        for name in ("FedBuff_T16_seed0.csv", "FedBuff_T16_seed0.jsonl"):
            self.assertEqual(
                read_bytes(os.path.join(out_a, "minimal", "cells", name)),
                read_bytes(os.path.join(out_b, "minimal", "cells", name)),
            )
        _, manifest_a = load_experiment_dir(os.path.join(out_a, "minimal"))
        _, manifest_b = load_experiment_dir(os.path.join(out_b, "minimal"))
        self.assertEqual(manifest_a["experiment_fingerprint"], manifest_b["experiment_fingerprint"])
        self.assertEqual(
            [c["final_checksum"] for c in manifest_a["cells"]],
            [c["final_checksum"] for c in manifest_b["cells"]],
        )

    def test_parallel_matches_serial(self):
        serial, out_a = self.run_experiment(MINIMAL, "seeds=[0, 1, 2]", out=os.path.join(self.tmp, "a"))
        parallel, out_b = self.run_experiment(MINIMAL, "seeds=[0, 1, 2]", out=os.path.join(self.tmp, "b"), jobs=2)
        self.assertEqual((serial.exit_code, parallel.exit_code), (0, 0), parallel.output)
        for seed in (0, 1, 2):
            name = f"FedBuff_T16_seed{seed}.csv"
            self.assertEqual(
                read_bytes(os.path.join(out_a, "minimal", "cells", name)),
                read_bytes(os.path.join(out_b, "minimal", "cells", name)),
            )

    def test_resolved_config_round_trips(self):
        result, out = self.run_experiment(MINIMAL)
        self.assertEqual(result.exit_code, 0)
        config, manifest = load_experiment_dir(os.path.join(out, "minimal"))
        self.assertEqual(experiment_fingerprint(config), manifest["experiment_fingerprint"])

    def test_invalid_override_names_the_invariant(self):
        result, out = self.run_experiment(MINIMAL, "hyper.K=0")
        self.assertEqual(result.exit_code, 1)
        self.assertIn("HyperParams.K", result.output)
        self.assertFalse(os.path.exists(os.path.join(out, "minimal", MANIFEST_FILE)))

    def test_straggler_aborts(self):
        config_path = os.path.join(self.tmp, "straggler.yaml")
        with open(config_path, "w") as f:
            f.write(STRAGGLER_CONFIG)
        result, out = self.run_experiment(config_path)
        self.assertEqual(result.exit_code, 2, result.output)

        exp_dir = os.path.join(out, "straggler")
        _, manifest = load_experiment_dir(exp_dir)
        cell = manifest["cells"][0]
        self.assertEqual(cell["status"], "aborted")
        self.assertEqual(cell["error"]["name"], "staleness-violation")
        self.assertIsNone(cell["final_checksum"])
        self.assertEqual(cell["rows"], 2)
        config = load_experiment_config(config_path)
        self.assertEqual(cell["fingerprint"], resolve_cells(config)[0].fingerprint)
        diagnostic = os.path.join(exp_dir, "logs", "aborts", "FedBuff_T16_seed0.json")
        self.assertTrue(os.path.exists(diagnostic))
        self.assertIn(os.path.relpath(diagnostic, exp_dir), cell["files"])

    def test_output_dir_from_environment(self):
        out = os.path.join(self.tmp, "from-env")
        result = self.run_cli("run", "-c", MINIMAL, env={"FEDBUFF_OUTPUT_DIR": out})
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists(os.path.join(out, "minimal", MANIFEST_FILE)))


class TestVerifyBoundCommand(CliTestCase):
    """Test verify-bound and its refusals."""

    def test_bound_holds_at_threshold_horizon(self):
        result, out = self.run_experiment(ACCEPTANCE, jobs=4)
        self.assertEqual(result.exit_code, 0, result.output)
        exp_dir = os.path.join(out, "acceptance_bound")

        verified = self.run_cli("verify-bound", exp_dir)
        self.assertEqual(verified.exit_code, 0, verified.output)
        self.assertIn("BOUND SATISFIED", verified.output)
        with open(os.path.join(exp_dir, BOUND_REPORT_FILE)) as f:
            report = json.load(f)
        self.assertTrue(report["satisfied"])
        self.assertEqual(report["num_seeds"], 32)
        self.assertLessEqual(
            report["empirical_lhs"] + report["stderr_multiplier"] * report["standard_error"],
            report["bound_value"],
        )
        _, manifest = load_experiment_dir(exp_dir)
        self.assertIn(BOUND_REPORT_FILE, {item["path"] for item in manifest["files"]})

        with open(os.path.join(exp_dir, SUMMARY_FILE)) as f:
            summary = json.load(f)
        expected = BoundInputs.from_dict(summary["bound_inputs"]).with_horizon(116)
        self.assertEqual(report["bound_inputs"], expected.to_dict())

    def test_missing_summary_is_refused(self):
        result, out = self.run_experiment(ACCEPTANCE, "seeds=[0, 1]")
        self.assertEqual(result.exit_code, 0, result.output)
        exp_dir = os.path.join(out, "acceptance_bound")
        os.remove(os.path.join(exp_dir, SUMMARY_FILE))
        verified = self.run_cli("verify-bound", exp_dir)
        self.assertEqual(verified.exit_code, 1)
        self.assertIn("Missing summary", verified.output)

    def test_manual_schedule_is_refused(self):
        result, out = self.run_experiment(MINIMAL, "seeds=[0, 1]")
        self.assertEqual(result.exit_code, 0)
        verified = self.run_cli("verify-bound", os.path.join(out, "minimal"))
        self.assertEqual(verified.exit_code, 1)
        self.assertIn("auto stepsize schedule", verified.output)

    def test_short_horizon_is_refused(self):
        result, out = self.run_experiment(ACCEPTANCE, "seeds=[0, 1]", "horizons=[50]")
        self.assertEqual(result.exit_code, 0)
        verified = self.run_cli("verify-bound", os.path.join(out, "acceptance_bound"))
        self.assertEqual(verified.exit_code, 1)
        self.assertIn("116", verified.output)

    def test_not_an_experiment_directory(self):
        result = self.run_cli("verify-bound", self.tmp)
        self.assertEqual(result.exit_code, 1)


class TestFitRateCommand(CliTestCase):
    """Test fit-rate over a horizon sweep."""

    def test_fit_writes_report(self):
        result, out = self.run_experiment(RATE_SWEEP, "seeds=[0, 1]", "horizons=[128, 256, 512, 1024]")
        self.assertEqual(result.exit_code, 0, result.output)
        exp_dir = os.path.join(out, "rate_sweep")
        fitted = self.run_cli("fit-rate", exp_dir)
        with open(os.path.join(exp_dir, RATE_FIT_FILE)) as f:
            fit = json.load(f)
        self.assertEqual(fit["horizons"], [128, 256, 512, 1024])
        self.assertEqual(fitted.exit_code, 0 if fit["slope"] <= RATE_SLOPE_THRESHOLD else 3, fitted.output)

    @unittest.skipIf(SLOW_TESTS_SKIPPED, "FEDBUFF_SKIP_SLOW_TESTS is set")
    def test_full_sweep_decays_fast_enough(self):
        result, out = self.run_experiment(RATE_SWEEP, jobs=4)
        self.assertEqual(result.exit_code, 0, result.output)
        exp_dir = os.path.join(out, "rate_sweep")
        fitted = self.run_cli("fit-rate", exp_dir)
        self.assertEqual(fitted.exit_code, 0, fitted.output)
        with open(os.path.join(exp_dir, RATE_FIT_FILE)) as f:
            fit = json.load(f)
        self.assertEqual(fit["horizons"], [128, 256, 512, 1024, 2048])
        self.assertLessEqual(fit["slope"], RATE_SLOPE_THRESHOLD)

    def test_too_few_horizons(self):
        result, out = self.run_experiment(MINIMAL, "seeds=[0, 1]")
        self.assertEqual(result.exit_code, 0)
        self.assertEqual(self.run_cli("fit-rate", os.path.join(out, "minimal")).exit_code, 1)


class TestTraceDiff(CliTestCase):
    """Test event log comparison."""

    def write(self, name, lines):
        path = os.path.join(self.tmp, name)
        with open(path, "w") as f:
            f.write("".join(line + "\n" for line in lines))
        return path

    def test_identical_runs_have_identical_logs(self):
        _, out_a = self.run_experiment(MINIMAL, out=os.path.join(self.tmp, "a"))
        _, out_b = self.run_experiment(MINIMAL, out=os.path.join(self.tmp, "b"))
        log = os.path.join("minimal", "cells", "FedBuff_T16_seed0.jsonl")
        result = self.run_cli("trace-diff", os.path.join(out_a, log), os.path.join(out_b, log))
        self.assertEqual(result.exit_code, 0, result.output)

    def test_first_divergence_is_reported(self):
        a = self.write("a.jsonl", ['{"seq": 0}', '{"seq": 1}'])
        b = self.write("b.jsonl", ['{"seq": 9}', '{"seq": 1}'])
        result = self.run_cli("trace-diff", a, b)
        self.assertEqual(result.exit_code, 3)
        self.assertIn("line 1", result.output)

    def test_length_mismatch(self):
        a = self.write("a.jsonl", ['{"seq": 0}'])
        b = self.write("b.jsonl", ['{"seq": 0}', '{"seq": 1}'])
        diff = trace_diff(a, b)
        self.assertFalse(diff.equal)
        self.assertEqual(diff.first_divergence, 2)
        self.assertIsNone(diff.line_a)

    def test_malformed_line(self):
        a = self.write("a.jsonl", ['{"seq": 0}', "not json"])
        b = self.write("b.jsonl", ['{"seq": 0}', '{"seq": 1}'])
        result = self.run_cli("trace-diff", a, b)
        self.assertEqual(result.exit_code, 1)
        self.assertIn("line 2", result.output)


class TestLogging(unittest.TestCase):
    """Test the package logger setup and abort diagnostics."""

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.logger_name = "fedbuff_validator.test_logging"

    def tearDown(self):
        test_logger = logging.getLogger(self.logger_name)
        for handler in test_logger.handlers[:]:
            handler.close()
            test_logger.removeHandler(handler)
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_repeated_setup_closes_previous_handlers(self):
        first = setup_logger(self.logger_name, log_dir=os.path.join(self.tmp, "a"))
        (file_handler,) = [h for h in first.handlers if isinstance(h, logging.FileHandler)]
        first.info("first run")

        second = setup_logger(self.logger_name, log_dir=os.path.join(self.tmp, "b"))
        self.assertIsNone(file_handler.stream)
        self.assertNotIn(file_handler, second.handlers)
        self.assertEqual(len(second.handlers), 2)
        with open(os.path.join(self.tmp, "a", "fedbuff_validator.log")) as f:
            self.assertIn("first run", f.read())

    def test_file_log_has_no_color_codes(self):
        record = logging.LogRecord("x", logging.ERROR, __file__, 1, "\x1b[31mred\x1b[0m text", None, None)
        self.assertEqual(FileFormatter("%(message)s").format(record), "red text")

    def test_console_color_respects_no_color(self):
        record = logging.LogRecord("x", logging.WARNING, __file__, 1, "careful", None, None)
        with patch.dict(os.environ, {"NO_COLOR": "1"}):
            self.assertEqual(ColoredFormatter("%(message)s").format(record), "careful")
        with patch.dict(os.environ, {"NO_COLOR": "", "TERM": "xterm"}):
            colored = ColoredFormatter("%(message)s").format(record)
        self.assertNotEqual(colored, "careful")
        self.assertIn("careful", colored)

    def test_abort_diagnostic_file(self):
        path = log_abort_diagnostic("FedBuff_T8_seed1", {"name": "deadlock", "exit_code": 2}, self.tmp)
        self.assertEqual(str(path), os.path.join(self.tmp, "aborts", "FedBuff_T8_seed1.json"))
        with open(path) as f:
            self.assertEqual(json.load(f), {"name": "deadlock", "exit_code": 2})


class TestEnvironmentDefaults(CliTestCase):
    """Test environment-backed options."""

    def test_jobs_from_environment(self):
        with patch.dict(os.environ, {"FEDBUFF_JOBS": "2"}):
            result = self.run_cli("run", "-c", MINIMAL, "-o", "seeds=[0, 1]", "--out", self.tmp)
        self.assertEqual(result.exit_code, 0, result.output)

    def test_help_names_environment_variables(self):
        result = self.run_cli("run", "--help")
        self.assertIn("FEDBUFF_JOBS", result.output)
        self.assertIn("FEDBUFF_OUTPUT_DIR", result.output)


if __name__ == "__main__":
    unittest.main()
