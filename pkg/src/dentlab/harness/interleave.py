"""Attack and defense moves on every batch, and the reports built from them.

Three evaluation modes share one per-batch routine:

* static: the static model is attacked and predicts.
* deny-updates: the perturbation is crafted against the static model, then submitted to a
  freshly reset defense.
* interleaved: the defense adapts after every attack iterate and has the last move.

Batches are independent, so they may be evaluated in worker processes. Every random stream
is derived from the run seed and the batch index, which makes the reports independent of the
number of workers.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dentlab.attacks.classifier import ModelUnderAttack, StaticClassifier
from dentlab.attacks.ensemble import run_attack
from dentlab.attacks.projection import check_feasible
from dentlab.attacks.spec import AttackSpec, check_same_ball
from dentlab.data.dataset import Dataset
from dentlab.defense.classifier import DynamicClassifier
from dentlab.defense.config import DefenseConfig
from dentlab.defense.dent import DentDefense
from dentlab.harness.profiling import analytic_flops
from dentlab.harness.scenario import (
    DegenerateScenarioException,
    EvalReport,
    InvalidScenarioException,
    SampleRecord,
    SigmaPoint,
    accuracy,
    adversarial_count,
)
from dentlab.internal.common.seeds import derive_rng, derive_seed
from dentlab.nn.models import Model

logger = logging.getLogger("dentlab")

Attacks = Union[AttackSpec, Sequence[AttackSpec]]


class EvaluationMode(Enum):
    """Who the attack is crafted against and who predicts the perturbed batch."""

    STATIC = "static-static"
    DENY_UPDATES = "static-dent"
    INTERLEAVED = "dent-dent"


@dataclass
class BatchTask:
    """Everything needed to evaluate one batch, picklable for worker processes."""

    batch_index: int
    indices: np.ndarray
    """Positions of the samples in the evaluated dataset."""
    x: np.ndarray
    labels: np.ndarray
    attacked: np.ndarray
    """Per sample whether it is attacked; natural members of mixed batches are not."""
    model: Model
    defense: DefenseConfig
    attacks: Tuple[AttackSpec, ...]
    mode: EvaluationMode
    run_seed: int


@dataclass
class BatchOutcome:
    """Per-sample results of one batch."""

    batch_index: int
    records: List[SampleRecord]
    flops: int
    static_flops: int
    last_move_held: bool = True
    events: List[str] = field(default_factory=list)
    sigma_points: List[SigmaPoint] = field(default_factory=list)
    seeds: Dict[str, int] = field(default_factory=dict)


def member_seed(run_seed: int, spec: AttackSpec, batch_index: int, member_index: int) -> int:
    """Seed of one ensemble member on one batch; the same in every evaluation mode."""
    return derive_seed(run_seed, "attack", spec.seed, batch_index, member_index)


def _sigma_points(batch: int, phase: str, trajectory: List[float]) -> List[SigmaPoint]:
    return [SigmaPoint(batch, phase, step, sigma) for step, sigma in enumerate(trajectory, 1)]


def evaluate_batch(task: BatchTask) -> BatchOutcome:
    """Attack one batch with every ensemble member and let the defense predict each result.

    Under a defense the prediction of a sample depends on the whole submitted batch, so every
    member is replayed separately and a sample is robust only if all of its final predictions
    are correct.

    :param task: The batch and its settings.
    :raises AssertionError: If an attack left the threat model.
    :return: Per-sample records and the bookkeeping of the batch.
    """
    x = task.x.astype(np.float32)
    labels = task.labels
    defended = task.mode != EvaluationMode.STATIC
    static = StaticClassifier(task.model)
    outcome = BatchOutcome(task.batch_index, [], 0, 0)

    static_clean = static.logits(x).argmax(axis=1)
    if defended:
        natural_defense = DentDefense(task.model, task.defense)
        clean = natural_defense(x).argmax(axis=1)
        outcome.sigma_points += _sigma_points(
            task.batch_index, "natural", natural_defense.state.sigma_trajectory
        )
        outcome.events += natural_defense.state.events
    else:
        clean = static_clean

    member_predictions = []
    for member_index, base_spec in enumerate(task.attacks):
        spec = replace(
            base_spec, seed=member_seed(task.run_seed, base_spec, task.batch_index, member_index)
        )
        outcome.seeds[f"attack.b{task.batch_index}.m{member_index}"] = spec.seed
        attacker: ModelUnderAttack = static
        dynamic: Optional[DynamicClassifier] = None
        if task.mode == EvaluationMode.INTERLEAVED:
            dynamic = DynamicClassifier(DentDefense(task.model, task.defense))
            attacker = dynamic
        result = run_attack(attacker, x, labels, spec, mask=task.attacked)
        outcome.events += result.events

        feasible = check_feasible(result.delta, x, spec.norm, spec.epsilon)
        if not feasible.all():
            raise AssertionError(
                f"{spec.label} left the {spec.norm.value} ball of radius {spec.epsilon} on "
                f"{int((~feasible).sum())} samples of batch {task.batch_index}"
            )
        x_adv = (x + result.delta).astype(np.float32)

        if dynamic is not None:
            logits = dynamic.final_prediction(x_adv)
            last_move, stale = dynamic.audit()
            outcome.last_move_held = outcome.last_move_held and last_move
            if not stale:
                outcome.events.append(
                    f"batch {task.batch_index}: gradients of {spec.label} were not one move "
                    f"behind the defense"
                )
            final_defense = dynamic.defense
        elif defended:
            final_defense = DentDefense(task.model, task.defense)
            logits = final_defense(x_adv)
        else:
            logits = static.logits(x_adv)
        if defended and member_index == 0:
            outcome.sigma_points += _sigma_points(
                task.batch_index, "adversarial", final_defense.state.sigma_trajectory
            )
        if defended:
            outcome.events += final_defense.state.events
        member_predictions.append(logits.argmax(axis=1))

    predictions = np.stack(member_predictions)
    correct = predictions == labels[np.newaxis, :]
    for position in range(len(labels)):
        wrong = np.flatnonzero(~correct[:, position])
        winner = int(wrong[0]) if wrong.size else 0
        outcome.records.append(
            SampleRecord(
                batch=task.batch_index,
                index=int(task.indices[position]),
                label=int(labels[position]),
                clean_prediction=int(clean[position]),
                static_clean_prediction=int(static_clean[position]),
                adversarial_prediction=int(predictions[winner, position]),
                attacked=bool(task.attacked[position]),
                member_correct=[bool(value) for value in correct[:, position]],
                winner=winner,
            )
        )

    predictions_made = 1 + len(task.attacks)
    config = task.defense if defended else DefenseConfig.static()
    outcome.flops = predictions_made * analytic_flops(task.model, config, len(labels))
    outcome.static_flops = predictions_made * task.model.forward_flops(len(labels))
    return outcome


def run_batches(tasks: List[BatchTask], workers: int = 1) -> List[BatchOutcome]:
    """Evaluate batches, in worker processes when `workers` > 1.

    :return: Outcomes ordered by batch index.
    """
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(evaluate_batch, tasks))
    else:
        outcomes = [evaluate_batch(task) for task in tasks]
    return sorted(outcomes, key=lambda outcome: outcome.batch_index)


def as_specs(attacks: Attacks) -> Tuple[AttackSpec, ...]:
    """A single attack or an ensemble as a checked tuple of members."""
    specs = (attacks,) if isinstance(attacks, AttackSpec) else tuple(attacks)
    check_same_ball(list(specs))
    return specs


def sequential_batches(data: Dataset, batch_size: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(indices, attacked) of consecutive batches covering the dataset in order."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    positions = np.arange(len(data))
    return [
        (positions[start : start + batch_size], np.ones(min(batch_size, len(data) - start), bool))
        for start in range(0, len(data), batch_size)
    ]


def mixed_batches(
    data: Dataset, batch_size: int, adversarial: int, run_seed: int
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(indices, attacked) of batches mixing `adversarial` attacked and natural samples.

    Samples are drawn without replacement in a seeded order; within a batch the attacked
    samples sit at seeded positions.
    """
    order = derive_rng(run_seed, "mixed-batch").permutation(len(data))
    plans = []
    for batch_index, start in enumerate(range(0, len(data), batch_size)):
        chunk = order[start : start + batch_size]
        positions = derive_rng(run_seed, "mixed-batch", "positions", batch_index).permutation(
            len(chunk)
        )
        plans.append((chunk[positions], positions < adversarial))
    return plans


def held_out_batches(
    data: Dataset, natural: Dataset, batch_size: int, adversarial: int, run_seed: int
) -> Tuple[Dataset, List[Tuple[np.ndarray, np.ndarray]]]:
    """Mixed batches whose natural members come from a held-out dataset.

    Attacked samples are drawn from `data` and natural members from `natural`, both without
    replacement in seeded orders. Positions from len(data) on in the combined dataset refer to
    `natural`. The batch count is bounded by whichever source runs out first.

    :raises InvalidScenarioException: If the datasets differ in geometry or classes, or
        `natural` cannot fill a single batch.
    :return: The combined dataset and the (indices, attacked) plan of every batch.
    """
    if natural.image_shape != data.image_shape or natural.num_classes != data.num_classes:
        raise InvalidScenarioException(
            f"Held-out natural data '{natural.name}' {natural.image_shape} with "
            f"{natural.num_classes} classes does not match '{data.name}' {data.image_shape} "
            f"with {data.num_classes} classes"
        )
    natural_per_batch = batch_size - adversarial
    batches = min(-(-len(data) // adversarial), len(natural) // natural_per_batch)
    if batches < 1:
        raise InvalidScenarioException(
            f"Held-out natural data '{natural.name}' has {len(natural)} samples, a batch needs "
            f"{natural_per_batch}"
        )
    combined = Dataset(
        images=np.concatenate([data.images, natural.images]),
        labels=np.concatenate([data.labels, natural.labels]),
        split=data.split,
        name=f"{data.name}+{natural.name}",
        num_classes=data.num_classes,
    )
    attacked_order = derive_rng(run_seed, "mixed-batch").permutation(len(data))
    natural_order = len(data) + derive_rng(run_seed, "mixed-batch", "natural").permutation(
        len(natural)
    )
    plans = []
    for batch_index in range(batches):
        attacked = attacked_order[batch_index * adversarial : (batch_index + 1) * adversarial]
        natural_start = batch_index * natural_per_batch
        chunk = np.concatenate(
            [attacked, natural_order[natural_start : natural_start + natural_per_batch]]
        )
        positions = derive_rng(run_seed, "mixed-batch", "positions", batch_index).permutation(
            len(chunk)
        )
        plans.append((chunk[positions], positions < len(attacked)))
    return combined, plans


def _tasks(
    model: Model,
    defense: DefenseConfig,
    specs: Tuple[AttackSpec, ...],
    data: Dataset,
    plans: List[Tuple[np.ndarray, np.ndarray]],
    mode: EvaluationMode,
    run_seed: int,
) -> List[BatchTask]:
    return [
        BatchTask(
            batch_index=batch_index,
            indices=indices,
            x=data.images[indices],
            labels=data.labels[indices],
            attacked=attacked,
            model=model,
            defense=defense,
            attacks=specs,
            mode=mode,
            run_seed=run_seed,
        )
        for batch_index, (indices, attacked) in enumerate(plans)
    ]


def _per_attack_keys(specs: Tuple[AttackSpec, ...]) -> List[str]:
    labels = [spec.label for spec in specs]
    return [
        label if labels.count(label) == 1 else f"{label}#{index}"
        for index, label in enumerate(labels)
    ]


def build_report(
    scenario: str,
    mode: EvaluationMode,
    defense: DefenseConfig,
    specs: Tuple[AttackSpec, ...],
    outcomes: List[BatchOutcome],
    batch_size: int,
    wall_time: float,
    run_seed: int,
    variant: Optional[Dict[str, str]] = None,
) -> EvalReport:
    """Aggregate batch outcomes into a checked report.

    Adversarial and per-attack accuracies are computed over the attacked samples only.
    """
    records = [record for outcome in outcomes for record in outcome.records]
    attacked = [record for record in records if record.attacked]
    natural = [record for record in records if not record.attacked]
    per_attack = {
        key: accuracy([record.member_correct[index] for record in attacked])
        for index, key in enumerate(_per_attack_keys(specs))
    }
    flops = sum(outcome.flops for outcome in outcomes)
    static_flops = sum(outcome.static_flops for outcome in outcomes)
    seeds = {"run": run_seed}
    for outcome in outcomes:
        seeds.update(outcome.seeds)
    defended = mode != EvaluationMode.STATIC
    first = specs[0]
    report = EvalReport(
        scenario=scenario,
        kind=mode.value,
        attack="+".join(spec.label for spec in specs),
        norm=first.norm.value,
        epsilon=first.epsilon,
        attack_steps=first.iterations,
        defense=defense.label if defended else "static",
        defense_steps=defense.steps if defended else 0,
        batch_size=batch_size,
        natural_accuracy=accuracy([r.clean_prediction == r.label for r in records]),
        static_natural_accuracy=accuracy([r.static_clean_prediction == r.label for r in records]),
        adversarial_accuracy=accuracy([record.robust for record in attacked]),
        per_attack_accuracy=per_attack,
        records=records,
        wall_time=wall_time,
        flops=flops,
        flops_relative=flops / static_flops if static_flops else 1.0,
        seeds=seeds,
        events=[event for outcome in outcomes for event in outcome.events],
        sigma_trajectories=[point for outcome in outcomes for point in outcome.sigma_points],
        variant=dict(variant or {}),
        natural_member_accuracy=accuracy([r.robust for r in natural]) if natural else None,
        last_move_held=all(outcome.last_move_held for outcome in outcomes),
    )
    report.check_invariants()
    logger.info(
        "Scenario %s (%s, %s vs %s): natural %.1f%%, adversarial %.1f%%",
        scenario,
        mode.value,
        report.attack,
        report.defense,
        report.natural_accuracy,
        report.adversarial_accuracy,
    )
    return report


def _evaluate(
    model: Model,
    defense: DefenseConfig,
    specs: Tuple[AttackSpec, ...],
    data: Dataset,
    plans: List[Tuple[np.ndarray, np.ndarray]],
    mode: EvaluationMode,
    scenario: str,
    batch_size: int,
    run_seed: int,
    workers: int,
    variant: Optional[Dict[str, str]],
) -> EvalReport:
    start = time.perf_counter()
    outcomes = run_batches(_tasks(model, defense, specs, data, plans, mode, run_seed), workers)
    wall_time = time.perf_counter() - start
    return build_report(
        scenario, mode, defense, specs, outcomes, batch_size, wall_time, run_seed, variant
    )


def run_static(
    model: Model,
    attacks: Attacks,
    data: Dataset,
    batch_size: int = 128,
    run_seed: int = 0,
    workers: int = 1,
    scenario: str = "static-static",
    variant: Optional[Dict[str, str]] = None,
) -> EvalReport:
    """Attack the static model and let it predict the perturbed batches."""
    specs = as_specs(attacks)
    plans = sequential_batches(data, batch_size)
    return _evaluate(
        model,
        DefenseConfig.static(),
        specs,
        data,
        plans,
        EvaluationMode.STATIC,
        scenario,
        batch_size,
        run_seed,
        workers,
        variant,
    )


def run_interleaved(
    model: Model,
    defense: DefenseConfig,
    attacks: Attacks,
    data: Dataset,
    batch_size: int = 128,
    run_seed: int = 0,
    workers: int = 1,
    scenario: str = "dent-dent",
    variant: Optional[Dict[str, str]] = None,
) -> EvalReport:
    """Attack the defense while it adapts after every attack iterate.

    The gradient of attack step t is computed against the defense state adapted to iterate
    t - 1, and the final prediction of every batch is made by the defense adapted to the
    submitted perturbation.

    :param model: The trained static model; never modified.
    :param defense: Adaptation settings.
    :param attacks: A single white-box attack or an ensemble sharing one ball.
    :param data: Evaluation data.
    :raises DegenerateScenarioException: If neither the defense nor any attack takes a step.
    """
    specs = as_specs(attacks)
    if defense.is_static and all(spec.iterations == 0 for spec in specs):
        raise DegenerateScenarioException(
            "Neither the attack nor the defense takes a step: attack iterations 0, "
            "defense steps 0"
        )
    plans = sequential_batches(data, batch_size)
    return _evaluate(
        model,
        defense,
        specs,
        data,
        plans,
        EvaluationMode.INTERLEAVED,
        scenario,
        batch_size,
        run_seed,
        workers,
        variant,
    )


def run_replayed(
    model: Model,
    defense: DefenseConfig,
    attacks: Attacks,
    data: Dataset,
    batch_size: int = 128,
    run_seed: int = 0,
    workers: int = 1,
    scenario: str = "static-dent",
    variant: Optional[Dict[str, str]] = None,
) -> EvalReport:
    """Craft the perturbations against the static model, then submit them to the defense."""
    specs = as_specs(attacks)
    plans = sequential_batches(data, batch_size)
    return _evaluate(
        model,
        defense,
        specs,
        data,
        plans,
        EvaluationMode.DENY_UPDATES,
        scenario,
        batch_size,
        run_seed,
        workers,
        variant,
    )


def run_deny_updates(
    model: Model,
    defense: DefenseConfig,
    attacks: Attacks,
    data: Dataset,
    batch_size: int = 128,
    run_seed: int = 0,
    workers: int = 1,
    scenario: str = "deny-updates",
    variant: Optional[Dict[str, str]] = None,
) -> List[EvalReport]:
    """Rows static-static, static-dent and dent-dent.

    The first two rows replay the same perturbations, crafted offline against the static
    model, against the static model and against the defense.
    """
    specs = as_specs(attacks)
    plans = sequential_batches(data, batch_size)
    rows = []
    for mode, config in (
        (EvaluationMode.STATIC, DefenseConfig.static()),
        (EvaluationMode.DENY_UPDATES, defense),
        (EvaluationMode.INTERLEAVED, defense),
    ):
        rows.append(
            _evaluate(
                model,
                config,
                specs,
                data,
                plans,
                mode,
                scenario,
                batch_size,
                run_seed,
                workers,
                variant,
            )
        )
    return rows


def run_mixed_batch(
    model: Model,
    defense: DefenseConfig,
    attacks: Attacks,
    data: Dataset,
    mix_ratio: Union[float, str],
    batch_size: int = 128,
    run_seed: int = 0,
    workers: int = 1,
    variant: Optional[Dict[str, str]] = None,
    natural_data: Optional[Dataset] = None,
) -> EvalReport:
    """Interleaved evaluation of batches mixing adversarial and natural samples.

    Only the adversarial members are attacked; adversarial and per-attack accuracies cover
    them alone, `natural_member_accuracy` the natural members of the same batches. A ratio
    of 1 is `run_interleaved`. The variant records the natural source: `evaluation` when the
    natural members are the not-attacked remainder of `data`, otherwise `<name>/<split>` of
    the held-out dataset.

    :param mix_ratio: Fraction of adversarial samples per batch, or 'one-of-16'.
    :param natural_data: Held-out natural members; the remainder of `data` when None.
    :raises InvalidScenarioException: If the ratio yields no adversarial sample per batch, or
        the held-out data does not fit `data`.
    """
    specs = as_specs(attacks)
    adversarial = adversarial_count(mix_ratio, batch_size)
    natural_source = (
        "evaluation" if natural_data is None else f"{natural_data.name}/{natural_data.split.value}"
    )
    variant = {**(variant or {}), "mix_ratio": str(mix_ratio), "natural_source": natural_source}
    if adversarial >= batch_size:
        return run_interleaved(
            model, defense, specs, data, batch_size, run_seed, workers, "mixed-batch", variant
        )
    if natural_data is None:
        plans = mixed_batches(data, batch_size, adversarial, run_seed)
    else:
        data, plans = held_out_batches(data, natural_data, batch_size, adversarial, run_seed)
    return _evaluate(
        model,
        defense,
        specs,
        data,
        plans,
        EvaluationMode.INTERLEAVED,
        "mixed-batch",
        batch_size,
        run_seed,
        workers,
        variant,
    )
