import logging
from typing import List, Optional

import numpy as np

from dentlab.attacks.classifier import BlackBoxModel, ModelUnderAttack
from dentlab.attacks.pgd import pgd
from dentlab.attacks.spec import AttackKind, AttackResult, AttackSpec, check_same_ball
from dentlab.attacks.square import square_attack

logger = logging.getLogger("dentlab")


def run_attack(
    model: ModelUnderAttack,
    x: np.ndarray,
    labels: np.ndarray,
    spec: AttackSpec,
    mask: Optional[np.ndarray] = None,
) -> AttackResult:
    """Run a single attack; black-box attacks only get a query facade of the model."""
    if spec.kind == AttackKind.SQUARE:
        return square_attack(BlackBoxModel(model), x, labels, spec, mask=mask)
    return pgd(model, x, labels, spec, mask=mask)


def worst_case_ensemble(
    model: ModelUnderAttack,
    x: np.ndarray,
    labels: np.ndarray,
    specs: List[AttackSpec],
    mask: Optional[np.ndarray] = None,
) -> AttackResult:
    """Run every attack on the full batch and keep, per sample, the first one which succeeds.

    A sample counts as robust only if every member fails on it; robust samples keep the
    perturbation of the first member.

    :param model: The attacked model.
    :param x: Clean inputs of shape (B, C, H, W).
    :param labels: True labels of shape (B,).
    :param specs: Member attacks sharing norm and radius.
    :param mask: Optional per-sample flags of attacked samples.
    :return: The combined result; `winner` holds the chosen member per sample and `members`
        the individual results.
    """
    check_same_ball(specs)
    members = [run_attack(model, x, labels, spec, mask) for spec in specs]
    chosen = np.full(len(labels), -1, dtype=np.int64)
    for index, result in enumerate(members):
        chosen[(chosen < 0) & result.success_mask] = index
        logger.debug(
            "Ensemble member %s: %s successful", result.attack_name, int(result.success_mask.sum())
        )
    winner = np.where(chosen < 0, 0, chosen)
    stacked_delta = np.stack([result.delta for result in members])
    stacked_loss = np.stack([result.per_sample_loss for result in members])
    rows = np.arange(len(labels))
    return AttackResult(
        delta=stacked_delta[winner, rows],
        success_mask=chosen >= 0,
        queries_or_steps=sum(result.queries_or_steps for result in members),
        per_sample_loss=stacked_loss[winner, rows],
        attack_name="+".join(result.attack_name for result in members),
        winner=winner,
        events=[event for result in members for event in result.events],
        members=members,
    )
