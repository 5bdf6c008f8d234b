"""Square attack: gradient-free random search with square-shaped updates."""

import logging
import math
from typing import Optional

import numpy as np

from dentlab.attacks.classifier import BlackBoxModel
from dentlab.attacks.projection import per_sample_norm, project
from dentlab.attacks.spec import (
    AttackBudgetException,
    AttackResult,
    AttackSpec,
    InvalidAttackSpecException,
    Norm,
)
from dentlab.internal.common.seeds import derive_rng

logger = logging.getLogger("dentlab")

INITIAL_SIDE_FRACTION = 0.3
SCHEDULE_PHASES = 5


def margin(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """z_y - max_{i != y} z_i per sample; negative means misclassified."""
    masked = logits.astype(np.float64, copy=True)
    rows = np.arange(logits.shape[0])
    true_logit = masked[rows, labels].copy()
    masked[rows, labels] = -np.inf
    return true_logit - masked.max(axis=1)


def patch_side(height: int, query: int, budget: int) -> int:
    """Side of the square proposed at a query.

    Starts at ceil(0.3 H) and halves after every fifth of the budget, with a floor of 1.

    :param height: Image height.
    :param query: Index of the query, 1 for the first proposal.
    :param budget: Total number of queries.
    """
    initial = max(int(math.ceil(INITIAL_SIDE_FRACTION * height)), 1)
    halvings = int(SCHEDULE_PHASES * query / budget)
    return max(initial // (2**halvings), 1)


def _stripes(rng: np.random.Generator, x: np.ndarray, spec: AttackSpec) -> np.ndarray:
    batch, channels, height, width = x.shape
    signs = rng.choice(np.array([-1.0, 1.0]), size=(batch, channels, 1, width))
    delta = np.broadcast_to(spec.epsilon * signs, x.shape).astype(x.dtype)
    if spec.norm == Norm.L2:
        norms = per_sample_norm(delta, Norm.L2).reshape(-1, 1, 1, 1)
        delta = (delta / np.maximum(norms, 1e-12) * spec.epsilon).astype(x.dtype)
    return project(delta, spec.norm, spec.epsilon, x)


def square_attack(
    model: BlackBoxModel,
    x: np.ndarray,
    labels: np.ndarray,
    spec: AttackSpec,
    query_budget: Optional[int] = None,
    mask: Optional[np.ndarray] = None,
) -> AttackResult:
    """Untargeted random search on the margin loss using logit queries only.

    The search starts from vertical stripes of +-epsilon. Every further query proposes, for each
    sample not yet misclassified, a random square filled with +-epsilon per channel (l_inf) or
    shifted by +-epsilon / (s sqrt(C)) per channel (l_2), re-projects, and keeps the proposal
    where the margin decreases. The full batch is queried each time so a dynamic model sees
    the whole batch.

    :param model: Gradient-free view of the attacked model.
    :param x: Clean inputs of shape (B, C, H, W) in [0, 1].
    :param labels: True labels of shape (B,).
    :param spec: Norm, radius and seed of the attack.
    :param query_budget: Queries including the initialization; `spec.query_budget` if None.
    :param mask: Optional per-sample flags; unflagged samples keep a zero perturbation.
    :return: The final perturbations with per-sample accepted proposal counts.
    """
    budget = spec.query_budget if query_budget is None else query_budget
    if budget < 1:
        raise AttackBudgetException(f"The square attack needs at least 1 query, got {budget}")
    if spec.targeted:
        raise InvalidAttackSpecException("targeted", "the square attack is untargeted")
    x = np.asarray(x, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    batch, channels, height, width = x.shape
    keep = np.ones(batch, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    keep_view = keep.reshape(-1, 1, 1, 1)
    rng = derive_rng(spec.seed, "square")

    model.begin_batch(x)
    if spec.epsilon == 0:
        delta = np.zeros_like(x)
    else:
        delta = (_stripes(rng, x, spec) * keep_view).astype(x.dtype)
    current = margin(model.query(x + delta), labels)
    queries = 1
    accepted = np.zeros(batch, dtype=np.int64)

    while queries < budget and spec.epsilon > 0:
        active = keep & (current >= 0)
        if not active.any():
            break
        side = min(patch_side(height, queries, budget), height, width)
        rows = rng.integers(0, height - side + 1, size=batch)
        cols = rng.integers(0, width - side + 1, size=batch)
        signs = rng.choice(np.array([-1.0, 1.0]), size=(batch, channels, 1, 1))
        candidate = delta.copy()
        for b in np.flatnonzero(active):
            top, left = rows[b], cols[b]
            window = (b, slice(None), slice(top, top + side), slice(left, left + side))
            if spec.norm == Norm.LINF:
                candidate[window] = spec.epsilon * signs[b]
            else:
                candidate[window] += spec.epsilon / (side * math.sqrt(channels)) * signs[b]
        candidate = project(candidate, spec.norm, spec.epsilon, x)
        proposed = margin(model.query(x + candidate), labels)
        queries += 1
        improved = active & (proposed < current)
        delta[improved] = candidate[improved]
        current[improved] = proposed[improved]
        accepted[improved] += 1

    success = keep & (current < 0)
    logger.debug(
        "square: %s/%s successful after %s queries", int(success.sum()), int(keep.sum()), queries
    )
    return AttackResult(
        delta=delta,
        success_mask=success,
        queries_or_steps=queries,
        per_sample_loss=np.where(keep, -current, 0.0),
        attack_name=spec.label,
        accepted=accepted,
    )
