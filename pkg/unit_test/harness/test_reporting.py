import csv
import json
import tempfile
import unittest
from pathlib import Path

from dentlab.harness.profiling import ProfileRow
from dentlab.harness.reporting import (
    PER_ATTACK_FILE,
    PROFILE_FILE,
    REPORT_FILE,
    SIGMA_FILE,
    SUMMARY_COLUMNS,
    SUMMARY_FILE,
    ReportFormatException,
    RunResults,
    read_report_json,
    write_results,
)
from dentlab.harness.scenario import EvalReport, SampleRecord, SigmaPoint


def make_report(scenario: str, variant: dict) -> EvalReport:
    record = SampleRecord(
        batch=0,
        index=0,
        label=2,
        clean_prediction=2,
        static_clean_prediction=2,
        adversarial_prediction=1,
        attacked=True,
        member_correct=[False],
        winner=0,
    )
    return EvalReport(
        scenario=scenario,
        kind="dent-dent",
        attack="pgd-cross-entropy",
        norm="linf",
        epsilon=0.3,
        attack_steps=40,
        defense="dent-10",
        defense_steps=10,
        batch_size=1,
        natural_accuracy=100.0,
        static_natural_accuracy=100.0,
        adversarial_accuracy=0.0,
        per_attack_accuracy={"pgd-cross-entropy": 0.0},
        records=[record],
        wall_time=1.5,
        flops=31,
        flops_relative=31.0,
        seeds={"run": 7},
        sigma_trajectories=[SigmaPoint(0, "adversarial", 1, 0.65)],
        variant=variant,
    )


def read_rows(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.reader(handle))


class WriteResultsTest(unittest.TestCase):
    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.out = Path(self.directory.name)
        self.results = RunResults(
            reports=[
                make_report("dent-dent", {}),
                make_report("steps", {"axis": "defense_steps", "value": "10"}),
            ],
            profile=[ProfileRow(0, 0.01, 100, 1.0, 1.0)],
            config={"seed": 7},
            logs="finished",
        )

    def tearDown(self) -> None:
        self.directory.cleanup()

    def test__write_results__all_tables(self) -> None:
        # Act
        written = write_results(self.out, self.results)

        # Assert
        names = sorted(path.name for path in written)
        self.assertEqual(
            names,
            sorted(
                [
                    REPORT_FILE,
                    SUMMARY_FILE,
                    PER_ATTACK_FILE,
                    "sweep_steps.csv",
                    SIGMA_FILE,
                    PROFILE_FILE,
                ]
            ),
        )
        summary = read_rows(self.out / SUMMARY_FILE)
        self.assertEqual(summary[0], SUMMARY_COLUMNS)
        expected = ["dent-dent", "pgd-cross-entropy", "linf", "0.3", "10"]
        expected += ["100.0", "0.0", "-", "31.0"]
        self.assertEqual(summary[1], expected)
        self.assertEqual(summary[2][0], "steps/dent-dent")
        per_attack = read_rows(self.out / PER_ATTACK_FILE)
        self.assertEqual(per_attack[2][2], "worst-case")

    def test__write_results__timings(self) -> None:
        # Act
        write_results(self.out, self.results, timings=True)

        # Assert
        self.assertEqual(read_rows(self.out / SUMMARY_FILE)[1][7], "1.5")

    def test__read_report_json__inverse_of_write(self) -> None:
        # Arrange
        write_results(self.out, self.results)

        # Act
        restored = read_report_json(self.out / REPORT_FILE)

        # Assert
        self.assertEqual(restored, self.results)

    def test__read_report_json__newer_major_version(self) -> None:
        # Arrange
        path = self.out / REPORT_FILE
        path.write_text(json.dumps({"format_version": "2.0", "reports": []}))

        # Act / Assert
        with self.assertRaises(ReportFormatException) as context:
            read_report_json(path)
        self.assertIn("newer", str(context.exception))

    def test__read_report_json__not_json(self) -> None:
        # Arrange
        path = self.out / REPORT_FILE
        path.write_text("{")

        # Act / Assert
        with self.assertRaises(ReportFormatException):
            read_report_json(path)

    def test__read_report_json__missing_file(self) -> None:
        # Act / Assert
        with self.assertRaises(FileNotFoundError):
            read_report_json(self.out / "absent.json")
