"""Result files of a run.

``report.json`` holds every report with its per-sample records and is the source the CSV
tables can be re-rendered from. ``summary.csv`` has one row per report. Sweeps, per-attack
accuracies, smoothing widths and profiles get their own tables.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

from dentlab.harness.profiling import ProfileRow
from dentlab.harness.scenario import EvalReport

logger = logging.getLogger("dentlab")

PathLike = Union[str, Path]

REPORT_FORMAT_VERSION = "1.0"
SUMMARY_FILE = "summary.csv"
REPORT_FILE = "report.json"
PER_ATTACK_FILE = "per_attack.csv"
SIGMA_FILE = "sigma_trajectories.csv"
PROFILE_FILE = "profile.csv"

SUMMARY_COLUMNS = [
    "scenario",
    "attack",
    "norm",
    "eps",
    "steps",
    "natural_acc",
    "adv_acc",
    "seconds",
    "flops_rel",
]
PER_ATTACK_COLUMNS = ["scenario", "defense", "attack", "norm", "eps", "adv_acc"]
SWEEP_COLUMNS = ["axis", "value", "natural_acc", "adv_acc", "static_natural_acc", "flops_rel"]
SIGMA_COLUMNS = ["scenario", "batch", "phase", "step", "sigma"]
PROFILE_COLUMNS = ["steps", "seconds", "flops", "flops_rel", "seconds_rel"]
UNTIMED = "-"


class ReportFormatException(Exception):
    """Thrown when a report file cannot be read."""

    def __init__(self, path: PathLike, message: str):
        """Create the exception.

        :param path: The report file.
        :param message: What is wrong with it.
        """
        self.path = str(path)
        super().__init__(f"{path}: {message}")


@dataclass
class RunResults:
    """Everything written to the output directory of a run."""

    reports: List[EvalReport] = field(default_factory=list)
    profile: List[ProfileRow] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    """The validated run configuration."""
    logs: str = ""
    """Captured output of the run."""


def _write_csv(path: Path, columns: List[str], rows: Iterable[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
    logger.debug("Wrote %s", path)


def summary_row(report: EvalReport, timings: bool = False) -> List[Any]:
    """One summary.csv row; `seconds` is '-' unless timings are requested."""
    return [
        report.scenario if report.scenario == report.kind else f"{report.scenario}/{report.kind}",
        report.attack,
        report.norm,
        report.epsilon,
        report.defense_steps,
        report.natural_accuracy,
        report.adversarial_accuracy,
        report.wall_time if timings else UNTIMED,
        report.flops_relative,
    ]


def write_summary_csv(path: PathLike, reports: List[EvalReport], timings: bool = False) -> None:
    """Write one row per report.

    Without timings the file is a function of configuration and seed only.
    """
    _write_csv(Path(path), SUMMARY_COLUMNS, (summary_row(r, timings) for r in reports))


def write_per_attack_csv(path: PathLike, reports: List[EvalReport]) -> None:
    """Accuracy under every ensemble member separately and under the worst case."""
    rows = []
    for report in reports:
        for attack, adv_acc in report.per_attack_accuracy.items():
            rows.append(
                [report.scenario, report.defense, attack, report.norm, report.epsilon, adv_acc]
            )
        rows.append(
            [
                report.scenario,
                report.defense,
                "worst-case",
                report.norm,
                report.epsilon,
                report.adversarial_accuracy,
            ]
        )
    _write_csv(Path(path), PER_ATTACK_COLUMNS, rows)


def write_sweep_csv(path: PathLike, reports: List[EvalReport]) -> None:
    """One row per swept value."""
    rows = [
        [
            report.variant.get("axis", ""),
            report.variant.get("value", ""),
            report.natural_accuracy,
            report.adversarial_accuracy,
            report.static_natural_accuracy,
            report.flops_relative,
        ]
        for report in reports
    ]
    _write_csv(Path(path), SWEEP_COLUMNS, rows)


def write_sigma_csv(path: PathLike, reports: List[EvalReport]) -> None:
    """Smoothing width after every adaptation update."""
    rows = [
        [report.scenario, point.batch, point.phase, point.step, point.sigma]
        for report in reports
        for point in report.sigma_trajectories
    ]
    _write_csv(Path(path), SIGMA_COLUMNS, rows)


def write_profile_csv(path: PathLike, rows: List[ProfileRow]) -> None:
    """Time and operations per defense step count."""
    _write_csv(
        Path(path),
        PROFILE_COLUMNS,
        ([r.steps, r.seconds, r.flops, r.flops_relative, r.seconds_relative] for r in rows),
    )


def write_report_json(path: PathLike, results: RunResults) -> None:
    """Write all reports with their per-sample records."""
    document = {
        "format_version": REPORT_FORMAT_VERSION,
        "config": results.config,
        "reports": [report.to_json_dict() for report in results.reports],
        "profile": [asdict(row) for row in results.profile],
        "logs": results.logs,
    }
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=1, sort_keys=True)


def read_report_json(path: PathLike) -> RunResults:
    """Read a report written by `write_report_json`.

    :raises FileNotFoundError: If the file does not exist.
    :raises ReportFormatException: If the file is not a report or has a newer major version.
    """
    with open(path, encoding="utf-8") as handle:
        try:
            document = json.load(handle)
        except json.JSONDecodeError as error:
            raise ReportFormatException(path, f"not valid JSON: {error}") from error
    if not isinstance(document, dict) or "format_version" not in document:
        raise ReportFormatException(path, "missing format_version")
    major = str(document["format_version"]).split(".")[0]
    expected = REPORT_FORMAT_VERSION.split(".")[0]
    if not major.isdigit() or int(major) > int(expected):
        raise ReportFormatException(
            path,
            f"format version {document['format_version']} is newer than the supported "
            f"{REPORT_FORMAT_VERSION}",
        )
    try:
        return RunResults(
            reports=[EvalReport.from_json_dict(item) for item in document.get("reports", [])],
            profile=[ProfileRow(**row) for row in document.get("profile", [])],
            config=document.get("config", {}),
            logs=document.get("logs", ""),
        )
    except TypeError as error:
        raise ReportFormatException(path, f"unexpected report fields: {error}") from error


def sweep_reports(reports: List[EvalReport]) -> Dict[str, List[EvalReport]]:
    """Sweep rows grouped by scenario."""
    groups: Dict[str, List[EvalReport]] = {}
    for report in reports:
        if "axis" in report.variant:
            groups.setdefault(report.scenario, []).append(report)
    return groups


def write_tables(out_dir: PathLike, results: RunResults, timings: bool = False) -> List[Path]:
    """Write summary, per-attack, sweep, smoothing and profile tables.

    :return: The written files.
    """
    directory = Path(out_dir)
    written = []
    if results.reports:
        write_summary_csv(directory / SUMMARY_FILE, results.reports, timings)
        write_per_attack_csv(directory / PER_ATTACK_FILE, results.reports)
        written += [directory / SUMMARY_FILE, directory / PER_ATTACK_FILE]
    for scenario, reports in sweep_reports(results.reports).items():
        target = directory / f"sweep_{scenario}.csv"
        write_sweep_csv(target, reports)
        written.append(target)
    if any(report.sigma_trajectories for report in results.reports):
        write_sigma_csv(directory / SIGMA_FILE, results.reports)
        written.append(directory / SIGMA_FILE)
    if results.profile:
        write_profile_csv(directory / PROFILE_FILE, results.profile)
        written.append(directory / PROFILE_FILE)
    return written


def write_results(out_dir: PathLike, results: RunResults, timings: bool = False) -> List[Path]:
    """Write report.json and every table to the output directory."""
    directory = Path(out_dir)
    write_report_json(directory / REPORT_FILE, results)
    written = [directory / REPORT_FILE] + write_tables(directory, results, timings)
    logger.info("Wrote %s result files to %s", len(written), directory)
    return written
