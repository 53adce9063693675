import io
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock
import pandas as pd
from rich.console import Console
from pybns import __version__, builtin_fixture_may2018, sample
from pybns.cli import main

# run all tests: python -m unittest -v


class TestCli(unittest.TestCase):
    def setUp(self):
        """
        Create a scratch directory and a captured console
        """
        self.scratch = tempfile.TemporaryDirectory()
        self.root = Path(self.scratch.name)
        self.out = self.root / "out"
        self.console = Console(file=io.StringIO(), width=200)

    def tearDown(self):
        self.scratch.cleanup()

    def run_cli(self, *args, out=None):
        """
        Run the command with the scratch output directory
        """
        out = self.out if out is None else out
        return main([*args, "--output-dir", str(out)], console=self.console)

    def read(self, name, out=None):
        out = self.out if out is None else out
        return pd.read_csv(out / name, comment="#")

    def test_fit_fixture(self):
        """
        Fitting the fixture writes estimates and curves below a provenance header
        """
        self.assertEqual(self.run_cli("fit", "--fixture", "--model", "m2"), 0)
        header = (self.out / "map_m2.csv").read_text().splitlines()[0]
        self.assertEqual(header, f"# pybns command=fit seed=20180509 model=m2 version={__version__}")
        estimates = self.read("map_m2.csv")
        self.assertAlmostEqual(estimates["beta0"].iloc[0], 3.111, delta=0.05)
        curve = self.read("curve_m2.csv")
        self.assertEqual(len(curve), 360)
        self.assertEqual(list(curve.columns), ["tau", "yield", "forward"])

    def test_fit_model1_note(self):
        """
        The positive-support model is flagged for its ordering
        """
        self.assertEqual(self.run_cli("fit", "--fixture", "--model", "m1", "--restarts", "2"), 0)
        self.assertIn("undesirable", self.read("map_m1.csv")["note"].iloc[0])

    def test_fit_rolling(self):
        """
        The rolling option writes one row per date
        """
        self.assertEqual(self.run_cli("fit", "--fixture", "--rolling", "--restarts", "2"), 0)
        self.assertEqual(len(self.read("rolling_m2.csv")), 6)

    def test_missing_file(self):
        """
        An unreadable input exits with the I/O code and writes nothing
        """
        code = self.run_cli("fit", "--input", str(self.root / "absent.csv"))
        self.assertEqual(code, 3)
        self.assertFalse(self.out.exists())

    def test_malformed_file(self):
        """
        A file without tenor columns exits with the format code
        """
        path = self.root / "bad.csv"
        path.write_text("Date\n05/01/18\n")
        self.assertEqual(self.run_cli("fit", "--input", str(path)), 4)

    def test_undecodable_file(self):
        """
        A file that is not UTF-8 text exits with the format code
        """
        path = self.root / "binary.csv"
        path.write_bytes(b"\xff\xfe\xfa\x00\x81binary")
        self.assertEqual(self.run_cli("fit", "--input", str(path)), 4)
        self.assertFalse(self.out.exists())

    def test_undecodable_draws_file(self):
        """
        A draws file that is not UTF-8 text exits with the format code
        """
        path = self.root / "draws.bin"
        path.write_bytes(b"\xff\xfe\xfa\x00")
        self.assertEqual(self.run_cli("price", "--draws-file", str(path), "--model", "m3"), 4)

    def test_usage_errors(self):
        """
        Unknown commands and options exit with the usage code
        """
        self.assertEqual(main(["bootstrap"], console=self.console), 2)
        self.assertEqual(main(["fit", "--fixture", "--model", "m9"], console=self.console), 2)
        self.assertEqual(main([], console=self.console), 2)

    def test_source_required(self):
        """
        Without an input file or the fixture the run is rejected
        """
        self.assertEqual(self.run_cli("fit"), 8)

    def test_output_dir_variable(self):
        """
        The output directory falls back to the environment variable
        """
        target = self.root / "from-env"
        with mock.patch.dict(os.environ, {"PYBNS_OUTPUT_DIR": str(target)}):
            code = main(["fit", "--fixture", "--restarts", "1"], console=self.console)
        self.assertEqual(code, 0)
        self.assertTrue((target / "map_m2.csv").exists())

    def test_json_output(self):
        """
        JSON console output carries the report title
        """
        self.assertEqual(self.run_cli("fit", "--fixture", "--restarts", "1", "--format", "json"), 0)
        self.assertIn('"title": "MAP estimates"', self.console.file.getvalue())

    def test_filter(self):
        """
        Filtering writes scores, states, innovations, curves and a summary
        """
        path = self.root / "panel.csv"
        path.write_text(builtin_fixture_may2018().to_csv())
        self.assertEqual(self.run_cli("filter", "--input", str(path), "--lambda-grid", "0.5,1,2"), 0)
        scores = self.read("lambda_scores.csv")
        self.assertEqual(list(scores.columns), ["lambda", "log_likelihood"])
        self.assertEqual(len(scores), 3)
        self.assertEqual(len(self.read("filter_states.csv")), 6)
        self.assertEqual(len(self.read("filter_curves.csv")), 6 * 360)
        summary = self.read("filter_summary.csv")
        self.assertIn(summary["lam"].iloc[0], [0.5, 1.0, 2.0])
        header = (self.out / "filter_summary.csv").read_text().splitlines()[0]
        self.assertIn("model=dns", header)

    def test_zero_amplitude_kernel(self):
        """
        A zero-amplitude kernel gives byte-identical filter output
        """
        plain, zero = self.root / "plain", self.root / "zero"
        self.assertEqual(self.run_cli("filter", "--fixture", out=plain), 0)
        self.assertEqual(self.run_cli("filter", "--fixture", "--gp-amplitude", "0", out=zero), 0)
        for name in ("lambda_scores.csv", "filter_states.csv", "filter_summary.csv"):
            self.assertEqual((plain / name).read_bytes(), (zero / name).read_bytes())

    def test_filter_single_date(self):
        """
        A one-date panel cannot be filtered
        """
        path = self.root / "one.csv"
        path.write_text("Date,1 Yr,2 Yr,5 Yr,10 Yr\n05/01/18,2.26,2.50,2.82,2.97\n")
        self.assertEqual(self.run_cli("filter", "--input", str(path)), 8)

    def test_sample_single_chain(self):
        """
        One chain samples fine and reports R-hat as unavailable
        """
        code = self.run_cli("sample", "--fixture", "--chains", "1", "--warmup", "200", "--draws", "200")
        self.assertEqual(code, 0)
        diagnostics = self.read("diagnostics_m2.csv")
        self.assertTrue(diagnostics["r_hat"].isna().all())
        self.assertEqual(len(self.read("draws_m2.csv")), 200)
        summary = self.read("summary_m2.csv")
        self.assertEqual(list(summary.columns), ["parameter", "mean", "sd", "2.5%", "median", "97.5%"])

    def test_sample_restarts(self):
        """
        The restart count reaches the MAP search that centres the chains
        """
        with mock.patch("pybns.cli.sample", wraps=sample) as sampler:
            code = self.run_cli("sample", "--fixture", "--restarts", "3", "--chains", "1", "--warmup", "50", "--draws", "50")
        self.assertEqual(code, 0)
        options = sampler.call_args.kwargs["map_options"]
        self.assertEqual(options.restarts, 3)
        self.assertEqual(options.seed, 20180509)

    def test_sample_reproducible(self):
        """
        The same seed gives byte-identical files
        """
        first, second = self.root / "first", self.root / "second"
        args = ("sample", "--fixture", "--chains", "2", "--warmup", "100", "--draws", "100", "--seed", "7")
        self.assertEqual(self.run_cli(*args, out=first), 0)
        self.assertEqual(self.run_cli(*args, out=second), 0)
        for name in ("summary_m2.csv", "diagnostics_m2.csv", "draws_m2.csv"):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_price_from_draws_file(self):
        """
        A single stored draw prices to a point and a low traded price is undervalued
        """
        path = self.root / "draws.csv"
        path.write_text("# stored\nbeta0,beta1,beta2,lambda,sigma\n3.111,-1.44,-0.016,0.95,0.043\n")
        code = self.run_cli("price", "--draws-file", str(path), "--model", "m3", "--traded", "500")
        self.assertEqual(code, 0)
        summary = self.read("price_summary.csv")
        self.assertEqual(summary["ci_low"].iloc[0], summary["ci_high"].iloc[0])
        self.assertEqual(summary["draws_used"].iloc[0], 1)
        self.assertEqual(summary["verdict"].iloc[0], "undervalued")
        self.assertEqual(self.read("price_histogram.csv")["count"].sum(), 1)


if __name__ == "__main__":
    unittest.main()
