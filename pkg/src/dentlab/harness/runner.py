import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from dentlab.data.dataset import Dataset
from dentlab.defense.config import DefenseConfig, Objective, Smoothing
from dentlab.harness.interleave import (
    run_deny_updates,
    run_interleaved,
    run_mixed_batch,
    run_static,
)
from dentlab.harness.profiling import DEFAULT_PROFILE_STEPS, ProfileRow, profile
from dentlab.harness.scenario import EvalReport, Scenario, ScenarioKind
from dentlab.harness.sweep import SweepAxis, run_sweep
from dentlab.nn.layers import StatsMode
from dentlab.nn.models import Model

logger = logging.getLogger("dentlab")

UpdateProgressHandler = Callable[[float, str], None]

DEFAULT_BATCH_SIZES = (1, 2, 4, 8, 16, 32, 64, 128, 256)
DEFAULT_DEFENSE_STEPS = (0, 5, 10, 20)
DEFAULT_ATTACK_STEPS = (10, 20, 40)

SWEEP_KINDS: Dict[ScenarioKind, Tuple[SweepAxis, Tuple[float, ...]]] = {
    ScenarioKind.BATCH_SWEEP: (SweepAxis.BATCH_SIZE, DEFAULT_BATCH_SIZES),
    ScenarioKind.STEP_SWEEP: (SweepAxis.DEFENSE_STEPS, DEFAULT_DEFENSE_STEPS),
    ScenarioKind.EPS_SWEEP: (SweepAxis.EPSILON, ()),
    ScenarioKind.ATTACK_STEP_SWEEP: (SweepAxis.ATTACK_STEPS, DEFAULT_ATTACK_STEPS),
}
"""Swept axis and default values of every sweep kind; epsilon sweeps need explicit values."""


@dataclass
class ScenarioResult:
    """Rows produced by one scenario."""

    scenario: Scenario
    reports: List[EvalReport] = field(default_factory=list)
    profile: List[ProfileRow] = field(default_factory=list)


def _ablation_rows(
    model: Model,
    scenario: Scenario,
    data: Dataset,
    variants: Sequence[Tuple[Dict[str, str], DefenseConfig]],
    run_seed: int,
    workers: int,
) -> List[EvalReport]:
    return [
        run_interleaved(
            model,
            config,
            scenario.attacks,
            data,
            scenario.batch_size,
            run_seed,
            workers,
            scenario.label,
            variant,
        )
        for variant, config in variants
    ]


def norm_affine_variants(defense: DefenseConfig) -> List[Tuple[Dict[str, str], DefenseConfig]]:
    """Statistics (train-time, test-time) times affine updates (off, on), without smoothing.

    The row with train-time statistics and no affine updates predicts like the static model.
    """
    variants = []
    for stats in (StatsMode.TRAIN_TIME, StatsMode.TEST_TIME):
        for affine in (False, True):
            config = defense.with_overrides(
                stats_mode=stats, adapt_affine=affine, smoothing=Smoothing.NONE
            )
            variant = {"stats": stats.value, "affine": "on" if affine else "off"}
            variants.append((variant, config))
    return variants


def smoothing_variants(defense: DefenseConfig) -> List[Tuple[Dict[str, str], DefenseConfig]]:
    """Affine updates (off, on) times input smoothing (none, static, dynamic)."""
    variants = []
    for affine in (False, True):
        for smoothing in Smoothing:
            config = defense.with_overrides(adapt_affine=affine, smoothing=smoothing)
            variant = {"affine": "on" if affine else "off", "smoothing": smoothing.value}
            variants.append((variant, config))
    return variants


def loss_variants(defense: DefenseConfig) -> List[Tuple[Dict[str, str], DefenseConfig]]:
    """The minent and maxinf defense objectives."""
    return [
        ({"objective": objective.value}, defense.with_overrides(objective=objective))
        for objective in Objective
    ]


def run_scenario(
    model: Model,
    scenario: Scenario,
    data: Dataset,
    run_seed: int = 0,
    workers: int = 1,
) -> ScenarioResult:
    """Evaluate a scenario into its report rows.

    :param model: The trained static model; never modified.
    :param scenario: What to evaluate.
    :param data: Evaluation data.
    :param run_seed: Seed all random streams derive from.
    :param workers: Worker processes per evaluation.
    :return: The reports, or the profile rows of a profile scenario.
    """
    result = ScenarioResult(scenario)
    kind = scenario.kind
    if kind == ScenarioKind.STATIC_STATIC:
        result.reports.append(
            run_static(
                model,
                scenario.attacks,
                data,
                scenario.batch_size,
                run_seed,
                workers,
                scenario.label,
            )
        )
    elif kind == ScenarioKind.STATIC_DENT:
        result.reports += run_deny_updates(
            model,
            scenario.defense,
            scenario.attacks,
            data,
            scenario.batch_size,
            run_seed,
            workers,
            scenario.label,
        )
    elif kind == ScenarioKind.DENT_DENT:
        result.reports.append(
            run_interleaved(
                model,
                scenario.defense,
                scenario.attacks,
                data,
                scenario.batch_size,
                run_seed,
                workers,
                scenario.label,
            )
        )
    elif kind == ScenarioKind.MIXED_BATCH:
        assert scenario.mix_ratio is not None
        result.reports.append(
            run_mixed_batch(
                model,
                scenario.defense,
                scenario.attacks,
                data,
                scenario.mix_ratio,
                scenario.batch_size,
                run_seed,
                workers,
            )
        )
    elif kind in SWEEP_KINDS:
        axis, default_values = SWEEP_KINDS[kind]
        values = scenario.sweep_values or default_values
        base = replace(scenario, kind=ScenarioKind.DENT_DENT)
        result.reports += run_sweep(model, axis, values, base, data, run_seed, workers)
    elif kind == ScenarioKind.NORM_AFFINE_ABLATION:
        variants = norm_affine_variants(scenario.defense)
        result.reports += _ablation_rows(model, scenario, data, variants, run_seed, workers)
    elif kind == ScenarioKind.SMOOTHING_ABLATION:
        variants = smoothing_variants(scenario.defense)
        result.reports += _ablation_rows(model, scenario, data, variants, run_seed, workers)
    elif kind == ScenarioKind.LOSS_ABLATION:
        variants = loss_variants(scenario.defense)
        result.reports += _ablation_rows(model, scenario, data, variants, run_seed, workers)
    else:
        x = data.images[: scenario.batch_size]
        steps = tuple(int(value) for value in scenario.sweep_values) or DEFAULT_PROFILE_STEPS
        result.profile += profile(model, scenario.defense, x, steps)
    return result


def run_scenarios(
    model: Model,
    scenarios: Sequence[Scenario],
    data: Dataset,
    run_seed: int = 0,
    workers: int = 1,
    progress: Optional[UpdateProgressHandler] = None,
) -> List[ScenarioResult]:
    """Evaluate scenarios in order, reporting progress after each one."""
    results = []
    for index, scenario in enumerate(scenarios):
        logger.info("Running scenario %s (%s)", scenario.label, scenario.kind.value)
        results.append(run_scenario(model, scenario, data, run_seed, workers))
        if progress is not None:
            progress((index + 1) / len(scenarios), f"finished {scenario.label}")
    return results
