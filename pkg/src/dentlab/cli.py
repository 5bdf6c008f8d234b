"""Command line of dentlab.

Every command exits with 0 on success. Failures print a single line

    error code=<n> kind=<exception> field=<config path or -> message="<text>"

to stderr and exit with 2 for configuration and usage errors, 3 for a missing checkpoint and
1 for any other failure.
"""

import argparse
import io
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, NoReturn, Optional, Sequence

import streamcapture

from dentlab.attacks.spec import Norm
from dentlab.config_schema import ConfigException
from dentlab.data.dataset import Split
from dentlab.harness.interleave import run_static
from dentlab.harness.profiling import DEFAULT_PROFILE_STEPS, profile
from dentlab.harness.reporting import (
    REPORT_FILE,
    RunResults,
    read_report_json,
    write_results,
    write_tables,
)
from dentlab.harness.runner import SWEEP_KINDS, run_scenarios
from dentlab.harness.scenario import Scenario, ScenarioKind
from dentlab.nn.checkpoint import load_checkpoint, save_checkpoint
from dentlab.nn.models import Model, build_model
from dentlab.nn.training import train
from dentlab.run_config import RunConfig

logger = logging.getLogger("dentlab")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_CHECKPOINT = 3

DESCRIPTION = "Attack and defend models with test-time entropy minimization."


class UsageException(Exception):
    """Thrown for unknown flags and malformed command lines."""

    ...  # pragma: no cover


class MissingCheckpointException(Exception):
    """Thrown when the configured checkpoint does not exist."""

    def __init__(self, path: Path):
        """Create the exception.

        :param path: The missing checkpoint file.
        """
        self.path = path
        super().__init__(f"Checkpoint {path} does not exist; run 'dentlab train' first")


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise UsageException(message)


class LogCapture:
    """Copy everything written to stdout and stderr into a buffer while it is open."""

    def __init__(self, enabled: bool = True):
        """Start capturing.

        :param enabled: Capture nothing when False.
        """
        self.logs = io.BytesIO()
        self.capturers: List[streamcapture.StreamCapture] = []
        if enabled:
            self.capturers = [
                streamcapture.StreamCapture(sys.stdout, self.logs),
                streamcapture.StreamCapture(sys.stderr, self.logs),
            ]

    def close(self) -> str:
        """Stop capturing and return the captured text."""
        for capturer in self.capturers:
            capturer.close()
        self.capturers = []
        self.logs.flush()
        logs = self.logs.getvalue().decode(errors="replace")
        self.logs.close()
        return logs


def _log_progress(fraction: float, message: str) -> None:
    logger.info("Progress %.0f%%: %s", 100.0 * fraction, message)


def load_config(args: argparse.Namespace) -> RunConfig:
    """Read the configuration file, or the defaults, and apply command line overrides."""
    if args.config is None:
        config = RunConfig.from_json_config({})
    else:
        try:
            config = RunConfig.from_json_config_file(args.config)
        except FileNotFoundError as error:
            raise ConfigException("--config", f"{args.config} does not exist") from error
    return config.with_overrides(
        seed=args.seed,
        out_dir=args.out_dir,
        steps=args.steps,
        batch_size=args.batch_size,
        epsilon=args.eps,
        norm=args.norm,
        workers=args.workers,
    )


def load_model(config: RunConfig) -> Model:
    """The trained model of the configured checkpoint.

    :raises MissingCheckpointException: If the checkpoint does not exist.
    """
    if not config.checkpoint.exists():
        raise MissingCheckpointException(config.checkpoint)
    return load_checkpoint(config.checkpoint)


def _write(config: RunConfig, results: RunResults) -> None:
    write_results(config.out_dir, results, timings=config.output["timings"])


def _evaluate(config: RunConfig, run: Callable[[Model, RunResults], None]) -> RunResults:
    model = load_model(config)
    results = RunResults(config=config.to_json_dict())
    capture = LogCapture(config.output["capture_logs"])
    try:
        run(model, results)
    finally:
        results.logs = capture.close()
    if not config.output["sigma_trajectories"]:
        for report in results.reports:
            report.sigma_trajectories = []
    return results


def _run_scenario_list(config: RunConfig, scenarios: Sequence[Scenario]) -> RunResults:
    test_data = config.load_data(Split.TEST)

    def run(model: Model, results: RunResults) -> None:
        for outcome in run_scenarios(
            model, scenarios, test_data, config.seed, config.workers, _log_progress
        ):
            results.reports += outcome.reports
            results.profile += outcome.profile

    return _evaluate(config, run)


def command_train(config: RunConfig, args: argparse.Namespace) -> int:
    """Train a model on the training split and write the checkpoint."""
    data = config.load_data(Split.TRAIN)
    model = build_model(config.arch, config.num_classes, config.seed, **config.image_geometry)
    trained = train(model, data, config.train_spec(), _log_progress)
    save_checkpoint(trained.model, config.checkpoint)
    test_data = config.load_data(Split.TEST)
    correct = trained.model.predict(test_data.images).argmax(axis=1) == test_data.labels
    logger.info(
        "Wrote %s; natural test accuracy %.2f%%", config.checkpoint, 100.0 * correct.mean()
    )
    return EXIT_OK


def command_attack(config: RunConfig, args: argparse.Namespace) -> int:
    """Attack the static model with the ensemble of all configured attacks."""
    test_data = config.load_data(Split.TEST)
    batch_size = config.scenarios()[0].batch_size if config.scenarios() else 128

    def run(model: Model, results: RunResults) -> None:
        results.reports.append(
            run_static(
                model,
                config.attack_specs(),
                test_data,
                batch_size,
                config.seed,
                config.workers,
            )
        )

    _write(config, _evaluate(config, run))
    return EXIT_OK


def command_defend(config: RunConfig, args: argparse.Namespace) -> int:
    """Run every configured scenario."""
    _write(config, _run_scenario_list(config, config.scenarios()))
    return EXIT_OK


def command_sweep(config: RunConfig, args: argparse.Namespace) -> int:
    """Run the configured sweep scenarios."""
    sweeps = [scenario for scenario in config.scenarios() if scenario.kind in SWEEP_KINDS]
    if not sweeps:
        raise ConfigException("scenarios", "no sweep scenario is configured")
    _write(config, _run_scenario_list(config, sweeps))
    return EXIT_OK


def command_profile(config: RunConfig, args: argparse.Namespace) -> int:
    """Profile the configured profile scenarios, or the run defense on one test batch."""
    profiles = [s for s in config.scenarios() if s.kind == ScenarioKind.PROFILE]
    if profiles:
        _write(config, _run_scenario_list(config, profiles))
        return EXIT_OK
    test_data = config.load_data(Split.TEST)
    batch_size = config.scenarios()[0].batch_size if config.scenarios() else 128

    def run(model: Model, results: RunResults) -> None:
        x = test_data.images[:batch_size]
        results.profile += profile(model, config.defense_config(), x, DEFAULT_PROFILE_STEPS)

    _write(config, _evaluate(config, run))
    return EXIT_OK


def command_report(config: RunConfig, args: argparse.Namespace) -> int:
    """Re-render the tables of an output directory from its report.json."""
    source = Path(args.report) if args.report else config.out_dir / REPORT_FILE
    results = read_report_json(source)
    timings = bool(results.config.get("output", {}).get("timings", False))
    write_tables(source.parent, results, timings)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "train": command_train,
    "attack": command_attack,
    "defend": command_defend,
    "sweep": command_sweep,
    "profile": command_profile,
    "report": command_report,
}


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per entry of COMMANDS, all sharing the override flags."""
    overrides = _ArgumentParser(add_help=False)
    overrides.add_argument("--config", help="JSON run configuration")
    overrides.add_argument("--seed", type=int, help="Run seed")
    overrides.add_argument("--out-dir", help="Directory of the result files")
    overrides.add_argument("--steps", type=int, help="Defense adaptation steps")
    overrides.add_argument("--batch-size", type=int, help="Evaluation batch size")
    overrides.add_argument("--eps", type=float, help="Radius of every attack")
    overrides.add_argument("--norm", choices=[norm.value for norm in Norm], help="Attack norm")
    overrides.add_argument("--workers", type=int, help="Worker processes per evaluation")

    parser = _ArgumentParser(prog="dentlab", description=DESCRIPTION)
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    for name, command in COMMANDS.items():
        subparser = subparsers.add_parser(name, parents=[overrides], help=command.__doc__)
        if name == "report":
            subparser.add_argument("--report", help="report.json to render, default in out-dir")
    return parser


def format_error(code: int, error: BaseException) -> str:
    """The single machine-parseable error line."""
    field_path = getattr(error, "field_path", None) or "-"
    message = " ".join(str(error).split()).replace('"', '\\"')
    return f'error code={code} kind={type(error).__name__} field={field_path} message="{message}"'


def exit_code(error: BaseException) -> int:
    """Exit code of a failed command."""
    if isinstance(error, (ConfigException, UsageException)):
        return EXIT_USAGE
    if isinstance(error, MissingCheckpointException):
        return EXIT_MISSING_CHECKPOINT
    return EXIT_FAILURE


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run a command.

    :param argv: Arguments without the program name, sys.argv[1:] when None.
    :return: The exit code.
    """
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args)
        return COMMANDS[args.command](config, args)
    except Exception as error:
        code = exit_code(error)
        if code == EXIT_FAILURE:
            logger.exception("Command failed")
        print(format_error(code, error), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
