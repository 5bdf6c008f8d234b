"""Nominal and adversarial training of the static models."""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional

import numpy as np

from dentlab.attacks.classifier import StaticClassifier
from dentlab.attacks.pgd import pgd
from dentlab.attacks.spec import AttackSpec
from dentlab.autodiff import ops
from dentlab.autodiff.functional import cross_entropy
from dentlab.autodiff.tensor import Tensor, backward, tape_scope
from dentlab.data.dataset import Dataset
from dentlab.internal.common.seeds import derive_rng, derive_seed
from dentlab.nn.models import Model
from dentlab.nn.optim import SGD, Adam, Optimizer, ParamGroup, cosine_lr

logger = logging.getLogger("dentlab")

UpdateProgressHandler = Callable[[float, str], None]
"""Called with the completed fraction and a message, e.g. after every epoch."""


class TrainingDivergedException(Exception):
    """Thrown when the training loss becomes NaN or infinite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        """Create the exception.

        :param epoch: Zero-based epoch of the offending minibatch.
        :param batch: Zero-based index of the minibatch within the epoch.
        :param loss: The non-finite loss value.
        """
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch}: loss={loss}")


class TrainOptimizer(Enum):
    """Optimizer used for training."""

    SGD_MOMENTUM = "sgd-momentum"
    ADAM = "adam"


@dataclass
class TrainSpec:
    """How to train a model; the adversarial attack turns training into the min-max problem."""

    optimizer: TrainOptimizer = TrainOptimizer.SGD_MOMENTUM
    lr: float = 0.05
    """Base learning rate, cosine-decayed over the epochs. 0 leaves the parameters unchanged."""
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 10
    batch_size: int = 64
    adversarial: Optional[AttackSpec] = None
    """Inner maximization; every minibatch is replaced by its PGD perturbation when set."""
    seed: int = 0
    """Seed of the shuffling and of the inner attack."""

    def __post_init__(self) -> None:
        """Check the ranges of the fields."""
        if not math.isfinite(self.lr) or self.lr < 0:
            raise ValueError(f"lr must be finite and >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainedModel:
    """A trained model with its learning curves."""

    model: Model
    """The model in eval mode with frozen running statistics."""
    epoch_losses: List[float] = field(default_factory=list)
    """Mean training loss per epoch."""
    epoch_accuracies: List[float] = field(default_factory=list)
    """Training accuracy in percent per epoch, on the (possibly perturbed) minibatches."""
    batch_losses: List[float] = field(default_factory=list)
    """Loss of every minibatch in order."""


def _make_optimizer(model: Model, spec: TrainSpec) -> Optimizer:
    groups = [ParamGroup(model.parameters(), spec.lr)]
    if spec.optimizer == TrainOptimizer.ADAM:
        return Adam(groups)
    return SGD(groups, momentum=spec.momentum, weight_decay=spec.weight_decay)


def _check_dataset(model: Model, data: Dataset) -> None:
    if len(data) == 0:
        raise ValueError(f"Cannot train on the empty dataset '{data.name}'")
    if data.labels.min() < 0 or data.labels.max() >= model.num_classes:
        raise ValueError(
            f"Labels of '{data.name}' must lie in [0, {model.num_classes}), found "
            f"[{data.labels.min()}, {data.labels.max()}]"
        )


def train(
    model: Model,
    data: Dataset,
    spec: TrainSpec,
    progress: Optional[UpdateProgressHandler] = None,
) -> TrainedModel:
    """Train `model` in place with cross-entropy on (optionally perturbed) minibatches.

    The inner attack runs with the model in eval mode so crafting perturbations never touches
    the running statistics; with an epsilon of 0 the trajectory is identical to nominal
    training.

    :param model: The model to train.
    :param data: Training data with labels in [0, model.num_classes).
    :param spec: Training recipe.
    :param progress: Optional progress handler, called after every epoch.
    :raises TrainingDivergedException: When a minibatch loss is not finite.
    :return: The trained model in eval mode with its learning curves.
    """
    _check_dataset(model, data)
    optimizer = _make_optimizer(model, spec)
    shuffle_rng = derive_rng(spec.seed, "shuffle")
    result = TrainedModel(model=model)
    size = len(data)

    for epoch in range(spec.epochs):
        lr = cosine_lr(spec.lr, epoch, spec.epochs)
        for group in optimizer.groups:
            group.lr = lr
        order = shuffle_rng.permutation(size)
        total_loss = 0.0
        correct = 0
        for batch_index, start in enumerate(range(0, size, spec.batch_size)):
            index = order[start : start + spec.batch_size]
            x = data.images[index]
            labels = data.labels[index]
            if spec.adversarial is not None:
                attack = replace(
                    spec.adversarial,
                    seed=derive_seed(spec.seed, "adversarial", epoch, batch_index),
                )
                x = x + pgd(StaticClassifier(model), x, labels, attack).delta

            model.train()
            optimizer.zero_grad()
            with tape_scope():
                logits = model(Tensor(x))
                loss = ops.mean(cross_entropy(logits, labels))
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    model.eval()
                    raise TrainingDivergedException(epoch, batch_index, loss_value)
                backward(loss)
            optimizer.step()

            result.batch_losses.append(loss_value)
            total_loss += loss_value * len(index)
            correct += int(np.sum(logits.data.argmax(axis=1) == labels))

        model.eval()
        result.epoch_losses.append(total_loss / size)
        result.epoch_accuracies.append(100.0 * correct / size)
        logger.info(
            "Epoch %s/%s: lr=%.5f loss=%.4f train accuracy=%.2f%%",
            epoch + 1,
            spec.epochs,
            lr,
            result.epoch_losses[-1],
            result.epoch_accuracies[-1],
        )
        if progress is not None:
            progress((epoch + 1) / spec.epochs, f"epoch {epoch + 1}/{spec.epochs}")

    model.eval()
    return result
