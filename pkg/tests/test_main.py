"""Test the command line entry point and its exit codes."""

import io
import os
import sys
import tempfile
import unittest
from unittest.mock import patch

# Add the parent directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.harness import ExperimentRunner, ResultRow, ResultTable, VmcRecord, read_table_csv, write_table_csv
from src.main import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main


def run_cli(argv):
    with patch("sys.stdout", new_callable=io.StringIO) as stdout, patch("sys.stderr", new_callable=io.StringIO):
        code = main(argv)
    return code, stdout.getvalue()


class TestFitCommand(unittest.TestCase):
    """Parabola fits from the command line."""

    def test_published_table(self):
        code, output = run_cli(["fit", "--published", "Ar4"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("(D - 4.0)^2", output)
        self.assertIn("D=1:", output)
        self.assertIn("(not fitted)", output)

    def test_unknown_published_table(self):
        code, _ = run_cli(["fit", "--published", "Xe3"])
        self.assertEqual(code, EXIT_VALIDATION)

    def test_needs_exactly_one_source(self):
        code, _ = run_cli(["fit"])
        self.assertEqual(code, EXIT_VALIDATION)

    def test_result_table(self):
        rows = [
            ResultRow(species="Ar", n_atoms=3, dim=d, level=1, energy=-2.5 + 0.01 * (d - 3) ** 2, error=1e-7, method="CFMC")
            for d in (2, 3, 4, 5)
        ]
        with tempfile.TemporaryDirectory() as tmp:
            path = write_table_csv(ResultTable(species="Ar", n_atoms=3, seed=0, rows=rows), os.path.join(tmp, "t.csv"))
            code, output = run_cli(["fit", "--table", str(path)])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("D=5:", output)

    def test_too_few_dimensions(self):
        code, _ = run_cli(["fit", "--published", "Ar3", "--d-min", "5"])
        self.assertEqual(code, EXIT_NUMERICAL)


class TestExperimentCommands(unittest.TestCase):
    """Stage commands need a valid experiment config."""

    def test_missing_config(self):
        code, _ = run_cli(["vmc"])
        self.assertEqual(code, EXIT_VALIDATION)
        code, _ = run_cli(["--config", "/nonexistent/experiment.env", "scan-dims"])
        self.assertEqual(code, EXIT_VALIDATION)

    def test_vmc_stage_writes_rows(self):
        record = VmcRecord(dim=3, energies=[-2.55], errors=[1e-5], samples=1000, acceptance=0.5)
        with tempfile.TemporaryDirectory() as tmp:
            config = os.path.join(tmp, "experiment.env")
            with open(config, "w") as f:
                f.write("SPECIES=Ar\nN_ATOMS=3\nDIMS=2,3\n")
            with patch.object(ExperimentRunner, "vmc", return_value=record) as vmc:
                code, output = run_cli(["--config", config, "--out", tmp, "vmc"])
            table = read_table_csv(os.path.join(tmp, "Ar3_vmc.csv"))
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(vmc.call_count, 2)
        self.assertEqual([r.dim for r in table.rows], [2, 3])
        self.assertIn("VMC: -2.55", output)


class TestVerifyIdentities(unittest.TestCase):
    """Identity suite from the command line."""

    def test_small_suite(self):
        code, output = run_cli(["--seed", "2", "verify-identities", "--n-configs", "5", "--atoms", "3"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("cramer", output)
        self.assertNotIn("FAIL", output)


if __name__ == "__main__":
    unittest.main()
