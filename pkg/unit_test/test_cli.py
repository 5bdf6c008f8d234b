import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path
from typing import List, Tuple

from dentlab.cli import EXIT_MISSING_CHECKPOINT, EXIT_OK, EXIT_USAGE, format_error, main
from dentlab.config_schema import ConfigException
from dentlab.harness.reporting import REPORT_FILE, SUMMARY_FILE


def run(argv: List[str]) -> Tuple[int, str]:
    stderr = io.StringIO()
    with contextlib.redirect_stderr(stderr):
        code = main(argv)
    return code, stderr.getvalue()


class CliTest(unittest.TestCase):
    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)
        self.config_path = self.root / "run.json"
        self.write_config({})

    def tearDown(self) -> None:
        self.directory.cleanup()

    def write_config(self, changes: dict) -> None:
        config = {
            "seed": 1,
            "out_dir": str(self.root / "results"),
            "data": {"source": "synth-shapes", "train_count": 16, "test_count": 8, "classes": 2},
            "model": {"checkpoint": str(self.root / "model.dntl")},
            "train": {"epochs": 1, "batch_size": 8},
            "attacks": [{"epsilon": 0.1, "alpha": 0.05, "steps": 1}],
            "defense": {"steps": 1},
            "scenarios": [{"kind": "dent-dent", "batch_size": 4}],
            "output": {"capture_logs": False},
        }
        config.update(changes)
        self.config_path.write_text(json.dumps(config))

    def test__main__unknown_flag(self) -> None:
        # Act
        code, stderr = run(["defend", "--config", str(self.config_path), "--bogus"])

        # Assert
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("kind=UsageException", stderr)

    def test__main__missing_checkpoint(self) -> None:
        # Act
        code, stderr = run(["defend", "--config", str(self.config_path)])

        # Assert
        self.assertEqual(code, EXIT_MISSING_CHECKPOINT)
        self.assertIn("error code=3 kind=MissingCheckpointException", stderr)

    def test__main__invalid_config_names_field(self) -> None:
        # Arrange
        self.write_config({"attacks": [{"epsilon": -1.0}]})

        # Act
        code, stderr = run(["attack", "--config", str(self.config_path)])

        # Assert
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("field=attacks[0].epsilon", stderr)

    def test__main__missing_config_file(self) -> None:
        # Act
        code, stderr = run(["defend", "--config", str(self.root / "absent.json")])

        # Assert
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("field=--config", stderr)

    def test__main__train_defend_and_report(self) -> None:
        # Act
        train_code, _ = run(["train", "--config", str(self.config_path)])
        defend_code, _ = run(["defend", "--config", str(self.config_path)])
        summary = (self.root / "results" / SUMMARY_FILE).read_text()
        (self.root / "results" / SUMMARY_FILE).unlink()
        report_code, _ = run(["report", "--config", str(self.config_path)])

        # Assert
        self.assertEqual((train_code, defend_code, report_code), (EXIT_OK, EXIT_OK, EXIT_OK))
        self.assertTrue((self.root / "model.dntl").exists())
        self.assertTrue((self.root / "results" / REPORT_FILE).exists())
        self.assertEqual((self.root / "results" / SUMMARY_FILE).read_text(), summary)

    def test__main__seed_override_is_deterministic(self) -> None:
        # Arrange
        run(["train", "--config", str(self.config_path)])
        first_dir = self.root / "first"
        second_dir = self.root / "second"

        # Act
        for out_dir in (first_dir, second_dir):
            args = ["--seed", "5", "--out-dir", str(out_dir), "--steps", "2"]
            code, _ = run(["defend", "--config", str(self.config_path)] + args)
            self.assertEqual(code, EXIT_OK)

        # Assert
        first = (first_dir / SUMMARY_FILE).read_text()
        self.assertEqual(first, (second_dir / SUMMARY_FILE).read_text())
        self.assertIn(",2,", first.splitlines()[1])
        report = json.loads((first_dir / REPORT_FILE).read_text())
        self.assertEqual(report["config"]["seed"], 5)


class FormatErrorTest(unittest.TestCase):
    def test__format_error__single_line(self) -> None:
        # Act
        line = format_error(2, ConfigException("defense.steps", 'must be\n>= 0, got "x"'))

        # Assert
        self.assertEqual(
            line,
            "error code=2 kind=ConfigException field=defense.steps "
            'message="defense.steps: must be >= 0, got \\"x\\""',
        )
