import csv
import io
import json
import tempfile
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from matplotlib.figure import Figure

import manage
from apps.experiments.presets import get_preset
from apps.experiments.serializers import ConfigError, dump_config, load_config
from apps.experiments.services import closed_form_for, driving_for, estimate_theta, ExperimentContext
from apps.experiments.types import RunResult
from apps.experiments.writers import write_csv, write_json, write_svg


THETA_CONFIG = """\
name: slope-two
driving:
  kind: bernoulli-shift
  alphabet_size: 2
maps:
  family: example1
  params:
    s: 2.0
observable:
  family: distance
  center: 0.5
grid:
  cells: 4096
window:
  K: 100
  N: 70
evt:
  ladder: [256, 512, 1024]
  lo: -25
  theta: 0.5
"""


def read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


class ConfigTests(SimpleTestCase):
    def test_defaults_fill_every_section(self):
        config = load_config("")
        self.assertEqual(config["driving"]["kind"], "bernoulli-shift")
        self.assertEqual(config["evt"]["ladder"], [256])
        self.assertEqual(config["matrix"]["rule"], "coordinate")
        self.assertEqual(config["limits"]["radius"]["kind"], "harmonic")

    def test_dump_and_load_reproduce_the_config(self):
        config = load_config(THETA_CONFIG)
        text = dump_config(config)
        self.assertEqual(load_config(text), config)
        self.assertEqual(dump_config(load_config(text)), text)

    def test_parameter_rules_keep_their_form(self):
        config = load_config("maps:\n  family: example1\n  params:\n    s: {table: [2, 3]}\n")
        self.assertEqual(config["maps"]["params"]["s"], {"table": [2.0, 3.0]})

    def test_negative_grid_names_field_and_line(self):
        with self.assertRaises(ConfigError) as caught:
            load_config("name: bad\ngrid:\n  cells: -4\n")
        self.assertEqual(len(caught.exception.errors), 1)
        self.assertTrue(caught.exception.errors[0].startswith("grid.cells:"))
        self.assertIn("(line 3)", caught.exception.errors[0])

    def test_missing_map_parameter(self):
        with self.assertRaises(ConfigError) as caught:
            load_config("maps:\n  family: beta\n")
        self.assertTrue(caught.exception.errors[0].startswith("maps.params:"))

    def test_decreasing_ladder_is_rejected(self):
        with self.assertRaises(ConfigError) as caught:
            load_config("evt:\n  ladder: [512, 256]\n")
        self.assertIn("evt.ladder", caught.exception.errors[0])

    def test_rotation_rejects_table_rules(self):
        text = "driving:\n  kind: circle-rotation\n  alpha: 0.3819660112501051\nmaps:\n  family: example1\n  params:\n    s: {table: [2, 3]}\n"
        with self.assertRaises(ConfigError) as caught:
            load_config(text)
        self.assertTrue(caught.exception.errors[0].startswith("driving:"))

    def test_invalid_yaml(self):
        with self.assertRaises(ConfigError) as caught:
            load_config("grid: [1, 2\n")
        self.assertIn("invalid YAML", caught.exception.errors[0])

    def test_presets_validate(self):
        for name in ("1", "2", "3", "4"):
            config = load_config(dump_config(get_preset(name)))
            self.assertEqual(config["name"], f"example-{name}")
        with self.assertRaises(KeyError):
            get_preset("5")

    def test_driving_defaults_to_uniform_weights(self):
        driving = driving_for(load_config(THETA_CONFIG))
        self.assertEqual(driving.weights, (0.5, 0.5))


class ExamplePresetTests(SimpleTestCase):
    def test_example4_has_no_centre_returns(self):
        config = get_preset("4")
        config["window"] = {"K": 60, "N": 260}
        config["evt"].update({"hi": 200, "theta_fibers": 24})
        context = ExperimentContext(load_config(dump_config(config)))
        self.assertEqual(context.observable.family, "log-distance")
        payloads = context.path.payloads
        self.assertEqual({payload.map_param("beta") for payload in payloads}, {3.0, 4.0})
        self.assertEqual({payload.observable_param("center") for payload in payloads}, {0.25, 0.75})
        report = estimate_theta(context)
        self.assertEqual(report.k_max, 12)
        self.assertLess(float(np.max(report.qhat[-1])), 1e-3)
        np.testing.assert_allclose(report.closed_form, 1.0, atol=1e-12)
        self.assertAlmostEqual(report.mean_theta, 1.0, delta=1e-2)


class WriterTests(SimpleTestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def test_csv_adds_tolerance_columns(self):
        rows = [{"N": 4, "theta": 0.5, "theta_tol": 1e-3, "ratio": 0.25, "rate_tol": 0.1}]
        write_csv(self.tmp / "a.csv", rows)
        lines = (self.tmp / "a.csv").read_text().splitlines()
        self.assertEqual(lines[0], "N,theta,theta_tol,ratio,ratio_tol,rate_tol")
        self.assertEqual(lines[1], "4,0.5,0.001,0.25,,0.10000000000000001")

    def test_csv_is_byte_identical(self):
        rows = [{"x": 1.0 / 3.0, "flag": True, "name": None}]
        first = write_csv(self.tmp / "a.csv", rows).read_bytes()
        second = write_csv(self.tmp / "b.csv", rows).read_bytes()
        self.assertEqual(first, second)
        self.assertIn(b"0.33333333333333331,,1,", first)

    def test_json_sorts_keys_and_nulls_non_finite(self):
        write_json(self.tmp / "a.json", {"b": float("nan"), "a": [1, float("inf")]})
        self.assertEqual(json.loads((self.tmp / "a.json").read_text()), {"a": [1, None], "b": None})
        self.assertTrue((self.tmp / "a.json").read_text().startswith('{\n  "a"'))

    def test_svg_is_byte_identical(self):
        def figure():
            fig = Figure()
            fig.add_subplot().plot([0, 1, 2], [1, 0, 1])
            return fig

        first = write_svg(self.tmp / "a.svg", figure()).read_bytes()
        second = write_svg(self.tmp / "b.svg", figure()).read_bytes()
        self.assertEqual(first, second)

    def test_no_temporary_files_left(self):
        write_csv(self.tmp / "a.csv", [{"x": 1}])
        self.assertEqual(sorted(p.name for p in self.tmp.iterdir()), ["a.csv"])


class RunResultTests(SimpleTestCase):
    def test_merge_nests_summaries(self):
        parent = RunResult(subcommand="example-1")
        child = RunResult(subcommand="theta", files=["theta.csv"], summary={"mean_theta": 0.5})
        child.fail("theta", "off", 0.2, 0.01)
        parent.merge(child)
        self.assertFalse(parent.passed)
        self.assertEqual(parent.summary, {"theta": {"mean_theta": 0.5}})
        self.assertEqual(parent.failures[0].as_dict()["tolerance"], 0.01)


class ClosedFormSelectionTests(SimpleTestCase):
    def test_centred_slope_two_uses_fixed_point_formula(self):
        context = ExperimentContext(load_config(THETA_CONFIG))
        theta = closed_form_for(context)
        self.assertAlmostEqual(theta(0), 0.5, places=12)

    def test_period_selects_periodic_formula(self):
        text = THETA_CONFIG.replace("family: example1", "family: beta").replace("s: 2.0", "beta: 3.0")
        text = text.replace("center: 0.5", "center: 0.125").replace("theta: 0.5", "period: 2")
        context = ExperimentContext(load_config(text))
        self.assertAlmostEqual(closed_form_for(context)(0), 8.0 / 9.0, places=12)


class RunCommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def run_command(self, *args, **options):
        return call_command("run", *args, stdout=io.StringIO(), stderr=io.StringIO(), **options)

    def write_config(self, text: str) -> Path:
        path = self.tmp / "config.in.yaml"
        path.write_text(text, encoding="utf-8")
        return path

    def test_theta_run_writes_artifacts(self):
        out = self.tmp / "theta"
        self.run_command("theta", config=self.write_config(THETA_CONFIG), out=out)
        for name in ("thresholds.csv", "qhat.csv", "theta.csv", "theta.json", "theta.svg", "summary.json"):
            self.assertTrue((out / name).exists(), name)
        self.assertFalse((out / "failures.json").exists())
        summary = json.loads((out / "summary.json").read_text())
        self.assertTrue(summary["passed"])
        self.assertAlmostEqual(summary["results"]["mean_theta"], 0.5, delta=1e-2)
        self.assertEqual(load_config((out / "config.yaml").read_text())["name"], "slope-two")

    def test_theta_run_is_reproducible(self):
        config = self.write_config(THETA_CONFIG)
        self.run_command("theta", config=config, out=self.tmp / "a")
        self.run_command("theta", config=config, out=self.tmp / "b")
        for name in ("theta.csv", "qhat.csv", "theta.svg", "summary.json"):
            self.assertEqual((self.tmp / "a" / name).read_bytes(), (self.tmp / "b" / name).read_bytes(), name)

    def test_wrong_theta_fails_with_assertion_code(self):
        out = self.tmp / "wrong"
        with self.assertRaises(CommandError) as caught:
            self.run_command("theta", config=self.write_config(THETA_CONFIG.replace("theta: 0.5", "theta: 0.9")), out=out)
        self.assertEqual(caught.exception.returncode, 1)
        failures = json.loads((out / "failures.json").read_text())
        self.assertIn("theta", [failure["check"] for failure in failures])

    def test_invalid_config_exits_with_config_code(self):
        with self.assertRaises(CommandError) as caught:
            self.run_command("theta", config=self.write_config("grid:\n  cells: -4\n"), out=self.tmp / "bad")
        self.assertEqual(caught.exception.returncode, 2)

    def test_example_needs_a_preset(self):
        with self.assertRaises(CommandError) as caught:
            self.run_command("example", out=self.tmp / "example")
        self.assertEqual(caught.exception.returncode, 2)

    def test_matrix_check_passes_on_coordinate_masks(self):
        out = self.tmp / "matrix"
        config = self.write_config("matrix:\n  d: 5\n  cocycles: 3\n")
        self.run_command("matrix-check", config=config, out=out, threads=2)
        rows = read_rows(out / "matrix_check.csv")
        self.assertEqual(len(rows), 3 * 3)
        self.assertEqual({row["cocycle"] for row in rows}, {"0", "1", "2"})
        summary = json.loads((out / "summary.json").read_text())
        self.assertEqual(summary["results"]["passed"], 3)
        self.assertLess(summary["results"]["max_deviation"], 1e-8)

    def test_seed_flag_overrides_both_seeds(self):
        out = self.tmp / "seeded"
        self.run_command("matrix-check", config=self.write_config("matrix:\n  cocycles: 1\n"), out=out, seed=9)
        summary = json.loads((out / "summary.json").read_text())
        self.assertEqual(summary["seeds"], {"mc": 9, "path": 9})
        self.assertEqual(read_rows(out / "matrix_check.csv")[0]["seed"], "9")

    def test_branches_lists_every_map(self):
        out = self.tmp / "branches"
        config = self.write_config(
            "maps:\n  family: example1\n  params:\n    s: {table: [2, 3]}\nwindow:\n  K: 5\n  N: 40\n"
        )
        self.run_command("branches", config=config, out=out)
        rows = read_rows(out / "branches.csv")
        self.assertEqual({row["map"] for row in rows}, {"0", "1"})
        self.assertEqual({row["params"] for row in rows}, {"s=2.0", "s=3.0"})
        fibers = read_rows(out / "path.csv")
        self.assertEqual(len(fibers), 5 + 40 + 1)
        self.assertEqual(fibers[0]["fiber"], "-5")
        self.assertIn("map_s", fibers[0])

    def test_manage_entry_point_runs_a_subcommand(self):
        out = self.tmp / "entry"
        config = self.write_config("maps:\n  family: example1\n  params:\n    s: 2.0\nwindow:\n  K: 3\n  N: 10\n")
        with redirect_stdout(io.StringIO()):
            manage.main(["manage.py", "run", "branches", "--config", str(config), "--out", str(out)])
        self.assertEqual(len(read_rows(out / "path.csv")), 3 + 10 + 1)
        self.assertTrue((out / "summary.json").exists())
