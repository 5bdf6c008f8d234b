import logging
from dataclasses import replace
from enum import Enum
from typing import Dict, List, Optional, Sequence

from dentlab.attacks.spec import AttackKind
from dentlab.data.dataset import Dataset
from dentlab.harness.interleave import (
    run_interleaved,
    run_mixed_batch,
    run_replayed,
    run_static,
)
from dentlab.harness.scenario import EvalReport, InvalidScenarioException, Scenario, ScenarioKind
from dentlab.nn.models import Model

logger = logging.getLogger("dentlab")


class SweepAxis(Enum):
    """Scenario parameter varied by a sweep."""

    BATCH_SIZE = "batch_size"
    DEFENSE_STEPS = "defense_steps"
    EPSILON = "epsilon"
    ATTACK_STEPS = "attack_steps"


def evaluate_row(
    model: Model,
    scenario: Scenario,
    data: Dataset,
    run_seed: int = 0,
    workers: int = 1,
    variant: Optional[Dict[str, str]] = None,
) -> EvalReport:
    """Evaluate a scenario as a single report row.

    Static-static and static-dent scenarios give their own row, mixed batches the adversarial
    portion; everything else is the interleaved evaluation.
    """
    if scenario.kind == ScenarioKind.STATIC_STATIC:
        return run_static(
            model,
            scenario.attacks,
            data,
            scenario.batch_size,
            run_seed,
            workers,
            scenario.label,
            variant,
        )
    if scenario.kind == ScenarioKind.STATIC_DENT:
        return run_replayed(
            model,
            scenario.defense,
            scenario.attacks,
            data,
            scenario.batch_size,
            run_seed,
            workers,
            scenario.label,
            variant,
        )
    if scenario.kind == ScenarioKind.MIXED_BATCH:
        assert scenario.mix_ratio is not None
        return run_mixed_batch(
            model,
            scenario.defense,
            scenario.attacks,
            data,
            scenario.mix_ratio,
            scenario.batch_size,
            run_seed,
            workers,
            variant,
        )
    return run_interleaved(
        model,
        scenario.defense,
        scenario.attacks,
        data,
        scenario.batch_size,
        run_seed,
        workers,
        scenario.label,
        variant,
    )


def apply_axis(base: Scenario, axis: SweepAxis, value: float) -> Scenario:
    """Copy of the scenario with the swept parameter set to value."""
    if axis == SweepAxis.BATCH_SIZE:
        return replace(base, batch_size=int(value))
    if axis == SweepAxis.DEFENSE_STEPS:
        return replace(base, defense=base.defense.with_overrides(steps=int(value)))
    if axis == SweepAxis.EPSILON:
        return replace(base, attacks=tuple(spec.with_epsilon(value) for spec in base.attacks))
    return replace(
        base,
        attacks=tuple(
            replace(spec, steps=int(value)) if spec.kind == AttackKind.PGD else spec
            for spec in base.attacks
        ),
    )


def run_sweep(
    model: Model,
    axis: SweepAxis,
    values: Sequence[float],
    base: Scenario,
    data: Dataset,
    run_seed: int = 0,
    workers: int = 1,
) -> List[EvalReport]:
    """One report per axis value, with every other setting and all seeds held constant.

    :param model: The trained static model.
    :param axis: The varied parameter.
    :param values: Axis values in ascending order.
    :param base: The scenario the sweep varies.
    :param data: Evaluation data.
    :raises InvalidScenarioException: If values is empty or not sorted ascending.
    """
    if not values:
        raise InvalidScenarioException(f"The {axis.value} sweep has no values")
    if any(later < earlier for earlier, later in zip(values, values[1:])):
        raise InvalidScenarioException(
            f"The {axis.value} sweep values must be sorted ascending, got {list(values)}"
        )
    reports = []
    for value in values:
        logger.info("Sweep %s: %s = %s", base.label, axis.value, value)
        scenario = apply_axis(base, axis, value)
        variant = {"axis": axis.value, "value": f"{value:g}"}
        reports.append(evaluate_row(model, scenario, data, run_seed, workers, variant))
    return reports
