"""Projected gradient descent with momentum and random restarts."""

import logging
from typing import List, Optional

import numpy as np

from dentlab.attacks.classifier import ModelUnderAttack
from dentlab.attacks.losses import is_successful, runner_up_targets
from dentlab.attacks.projection import per_sample_norm, project
from dentlab.attacks.spec import AttackResult, AttackSpec, Norm
from dentlab.internal.common.seeds import derive_rng

logger = logging.getLogger("dentlab")


def random_start(rng: np.random.Generator, x: np.ndarray, spec: AttackSpec) -> np.ndarray:
    """Initial perturbation of a chain, projected into the ball and the pixel range.

    l_inf draws every element uniformly from [-epsilon, epsilon]; l_2 draws a uniform random
    direction and a radius uniform in [0, epsilon]. Without `spec.random_start` the chain
    starts at zero.

    :param rng: Generator of the chain.
    :param x: Clean inputs of shape (B, C, H, W).
    :param spec: The attack.
    :return: delta_0 with the shape and dtype of x.
    """
    if not spec.random_start:
        return np.zeros_like(x)
    if spec.norm == Norm.LINF:
        delta = rng.uniform(-spec.epsilon, spec.epsilon, size=x.shape)
    else:
        direction = rng.standard_normal(size=x.shape)
        norms = per_sample_norm(direction, Norm.L2).reshape((-1,) + (1,) * (x.ndim - 1))
        radius = rng.uniform(0.0, spec.epsilon, size=x.shape[0])
        delta = direction / np.maximum(norms, 1e-12) * radius.reshape(norms.shape)
    return project(delta.astype(x.dtype), spec.norm, spec.epsilon, x)


def _step_direction(gradient: np.ndarray, norm: Norm) -> np.ndarray:
    if norm == Norm.LINF:
        return np.sign(gradient)
    norms = per_sample_norm(gradient, Norm.L2).reshape((-1,) + (1,) * (gradient.ndim - 1))
    return np.where(norms > 0, gradient / np.where(norms > 0, norms, 1.0), 0.0)


class _BestIterates:
    """Per-sample worst case over every visited iterate of every chain.

    A misclassifying iterate beats a correctly classified one; otherwise the higher objective
    wins. The reported loss is the maximum objective over all iterates regardless.
    """

    def __init__(self, x: np.ndarray):
        batch = x.shape[0]
        self.delta = np.zeros_like(x)
        self.objective = np.full(batch, -np.inf)
        self.success = np.zeros(batch, dtype=bool)
        self.max_loss = np.full(batch, -np.inf)

    def visit(self, delta: np.ndarray, objective: np.ndarray, success: np.ndarray) -> None:
        objective = np.where(np.isfinite(objective), objective, -np.inf)
        better = (success & ~self.success) | (
            (success == self.success) & (objective > self.objective)
        )
        self.delta[better] = delta[better]
        self.objective[better] = objective[better]
        self.success[better] = success[better]
        self.max_loss = np.maximum(self.max_loss, objective)


def pgd(
    model: ModelUnderAttack,
    x: np.ndarray,
    labels: np.ndarray,
    spec: AttackSpec,
    mask: Optional[np.ndarray] = None,
) -> AttackResult:
    """Maximize the attack objective inside the epsilon ball with projected gradient steps.

    Every chain starts at `random_start` and takes `spec.steps` steps. A step moves along the
    sign of the gradient (l_inf) or the normalized gradient (l_2), is projected, and is then
    blended with the previous iterate: delta_t = P(delta + m (z - delta) + (1 - m) (delta -
    delta_prev)) with m = `spec.momentum`. The model is told about every iterate through
    `submit`, so a dynamic model computes the gradient of step t against its state after
    iterate t - 1. A non-finite gradient restarts the chain from a fresh random point.

    :param model: The attacked model.
    :param x: Clean inputs of shape (B, C, H, W) in [0, 1].
    :param labels: True labels of shape (B,).
    :param spec: The attack; targeted attacks aim at the runner-up of the clean prediction.
    :param mask: Optional per-sample flags; unflagged samples keep a zero perturbation.
    :return: The per-sample worst case over all iterates of all restarts.
    """
    x = np.asarray(x, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    keep = np.ones(x.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    keep_view = keep.reshape((-1,) + (1,) * (x.ndim - 1))

    model.begin_batch(x)
    clean_logits = model.logits(x)
    targets = runner_up_targets(clean_logits) if spec.targeted else None
    if spec.epsilon == 0:
        objective, _ = model.objective(x, labels, spec, targets)
        success = keep & is_successful(clean_logits, labels, spec.targeted, targets)
        return AttackResult(
            delta=np.zeros_like(x),
            success_mask=success,
            queries_or_steps=0,
            per_sample_loss=objective,
            attack_name=spec.label,
        )

    best = _BestIterates(x)
    events: List[str] = []
    for restart in range(spec.restarts):
        rng = derive_rng(spec.seed, "pgd", restart)
        if restart > 0:
            model.begin_batch(x)
        delta = random_start(rng, x, spec) * keep_view
        previous = delta
        model.submit(x + delta)
        for step in range(spec.steps):
            objective, gradient, logits = model.objective_and_gradient(
                x + delta, labels, spec, targets
            )
            success = keep & is_successful(logits, labels, spec.targeted, targets)
            best.visit(delta, objective, success)
            if not np.all(np.isfinite(gradient)):
                events.append(f"pgd restart {restart} step {step}: non-finite gradient, restarted")
                logger.debug("Non-finite gradient at restart %s step %s", restart, step)
                delta = random_start(rng, x, spec) * keep_view
                previous = delta
                model.submit(x + delta)
                continue
            candidate = project(
                delta + spec.alpha * _step_direction(gradient, spec.norm).astype(x.dtype),
                spec.norm,
                spec.epsilon,
                x,
            )
            if step > 0 and spec.momentum < 1.0:
                candidate = project(
                    delta
                    + spec.momentum * (candidate - delta)
                    + (1.0 - spec.momentum) * (delta - previous),
                    spec.norm,
                    spec.epsilon,
                    x,
                )
            previous, delta = delta, (candidate * keep_view).astype(x.dtype)
            model.submit(x + delta)
        objective, logits = model.objective(x + delta, labels, spec, targets)
        success = keep & is_successful(logits, labels, spec.targeted, targets)
        best.visit(delta, objective, success)
        logger.debug(
            "%s restart %s: %s/%s successful, mean best objective %.4f",
            spec.label,
            restart,
            int(best.success.sum()),
            int(keep.sum()),
            float(np.mean(best.objective[keep])) if keep.any() else 0.0,
        )

    return AttackResult(
        delta=best.delta * keep_view,
        success_mask=best.success & keep,
        queries_or_steps=spec.steps * spec.restarts,
        per_sample_loss=np.where(keep, best.max_loss, 0.0),
        attack_name=spec.label,
        events=events,
    )
