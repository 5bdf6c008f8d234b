"""Per-sample attack objectives on logits.

`attack_objective` always returns a quantity the attacker maximizes. Targeted cross-entropy
therefore enters negated, so maximizing it minimizes the loss toward the target.
"""

from typing import Optional

import numpy as np

from dentlab.autodiff import ops
from dentlab.autodiff.functional import cross_entropy
from dentlab.autodiff.tensor import Tensor
from dentlab.attacks.spec import AttackLoss, AttackSpec, InvalidAttackSpecException

DLR_EPS = 1e-12


def _check_dlr_classes(logits: Tensor) -> None:
    if logits.ndim != 2 or logits.shape[1] < 4:
        raise InvalidAttackSpecException(
            "loss", f"DLR needs at least 4 classes, got logits of shape {logits.shape}"
        )


def _best_other(logits: Tensor, labels: np.ndarray) -> Tensor:
    masked = logits.data.astype(np.float64, copy=True)
    masked[np.arange(masked.shape[0]), labels] = -np.inf
    return ops.gather_rows(logits, masked.argmax(axis=1))


def dlr_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Difference of logits ratio, -(z_y - max_{i != y} z_i) / (z_pi1 - z_pi3 + 1e-12).

    pi sorts the logits of a sample in descending order. The value is invariant to positive
    affine transformations of the logits.

    :param logits: Tensor of shape (B, C) with C >= 4.
    :param labels: True labels of shape (B,).
    :return: Tensor of shape (B,).
    """
    _check_dlr_classes(logits)
    labels = np.asarray(labels, dtype=np.int64)
    order = np.argsort(-logits.data, axis=1, kind="stable")
    numerator = ops.sub(ops.gather_rows(logits, labels), _best_other(logits, labels))
    denominator = ops.add(
        ops.sub(ops.gather_rows(logits, order[:, 0]), ops.gather_rows(logits, order[:, 2])),
        Tensor(np.asarray(DLR_EPS, dtype=logits.data.dtype)),
    )
    return ops.neg(ops.div(numerator, denominator))


def dlr_targeted_loss(logits: Tensor, labels: np.ndarray, targets: np.ndarray) -> Tensor:
    """Targeted DLR, -(z_y - z_t) / (z_pi1 - (z_pi3 + z_pi4) / 2 + 1e-12).

    :param logits: Tensor of shape (B, C) with C >= 4.
    :param labels: True labels of shape (B,).
    :param targets: Target labels of shape (B,).
    :return: Tensor of shape (B,).
    """
    _check_dlr_classes(logits)
    order = np.argsort(-logits.data, axis=1, kind="stable")
    numerator = ops.sub(
        ops.gather_rows(logits, np.asarray(labels)), ops.gather_rows(logits, np.asarray(targets))
    )
    lower = ops.mul(
        ops.add(ops.gather_rows(logits, order[:, 2]), ops.gather_rows(logits, order[:, 3])),
        Tensor(np.asarray(0.5, dtype=logits.data.dtype)),
    )
    denominator = ops.add(
        ops.sub(ops.gather_rows(logits, order[:, 0]), lower),
        Tensor(np.asarray(DLR_EPS, dtype=logits.data.dtype)),
    )
    return ops.neg(ops.div(numerator, denominator))


def margin_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """max_{i != y} z_i - z_y, positive exactly when the sample is misclassified."""
    labels = np.asarray(labels, dtype=np.int64)
    return ops.sub(_best_other(logits, labels), ops.gather_rows(logits, labels))


def runner_up_targets(logits: np.ndarray) -> np.ndarray:
    """Second most likely class of every row, the target of targeted attacks."""
    return np.argsort(-logits, axis=1, kind="stable")[:, 1]


def attack_objective(
    logits: Tensor, labels: np.ndarray, spec: AttackSpec, targets: Optional[np.ndarray] = None
) -> Tensor:
    """Per-sample quantity the attack maximizes.

    :param logits: Tensor of shape (B, C).
    :param labels: True labels of shape (B,).
    :param spec: Selects loss and targeting.
    :param targets: Target labels, required when spec.targeted.
    :return: Tensor of shape (B,).
    """
    if spec.targeted and targets is None:
        raise InvalidAttackSpecException("targeted", "targeted attacks need target labels")
    if spec.loss == AttackLoss.CROSS_ENTROPY:
        if spec.targeted:
            return ops.neg(cross_entropy(logits, targets))  # type: ignore[arg-type]
        return cross_entropy(logits, labels)
    if spec.loss == AttackLoss.DLR:
        if spec.targeted:
            return dlr_targeted_loss(logits, labels, targets)  # type: ignore[arg-type]
        return dlr_loss(logits, labels)
    if spec.targeted:
        return ops.neg(margin_loss(logits, targets))  # type: ignore[arg-type]
    return margin_loss(logits, labels)


def is_successful(
    logits: np.ndarray, labels: np.ndarray, targeted: bool, targets: Optional[np.ndarray] = None
) -> np.ndarray:
    """Per sample whether the prediction is wrong (untargeted) or the target (targeted)."""
    predictions = logits.argmax(axis=1)
    if targeted:
        return predictions == targets
    return predictions != labels
