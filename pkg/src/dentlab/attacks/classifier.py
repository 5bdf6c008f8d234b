"""What an attack can see of the model it attacks."""

from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np

from dentlab.autodiff import ops
from dentlab.autodiff.tensor import Tensor, grad, no_grad, tape_scope
from dentlab.attacks.losses import attack_objective
from dentlab.attacks.spec import AttackSpec
from dentlab.nn.models import Model

ObjectiveAndGradient = Tuple[np.ndarray, np.ndarray, np.ndarray]
"""Per-sample objective, its gradient with respect to the input, and the logits."""


class ModelUnderAttack(ABC):
    """A classifier exposing logits and input gradients to a white-box attacker.

    Attacks call `begin_batch` before every chain, `submit` after producing every iterate and
    `objective_and_gradient` to obtain a step direction. Static models ignore submissions; a
    dynamic defense adapts to them.
    """

    num_classes: int
    """Number of logits."""

    @abstractmethod
    def forward(self, x: Tensor) -> Tensor:
        """Differentiable logits under the current state."""
        ...  # pragma: no cover

    def begin_batch(self, x: np.ndarray) -> None:
        """Start a new attack chain on clean inputs x."""

    def submit(self, x_adv: np.ndarray) -> None:
        """Hand an attack iterate to the model."""

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Logits under the current state, without adaptation.

        :param x: Inputs of shape (B, C, H, W).
        :return: Logits of shape (B, num_classes).
        """
        with no_grad():
            return self.forward(Tensor(x)).data

    def query(self, x: np.ndarray) -> np.ndarray:
        """Black-box access: the logits the deployed model returns for x."""
        return self.logits(x)

    def objective(
        self, x: np.ndarray, labels: np.ndarray, spec: AttackSpec, targets: Optional[np.ndarray]
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Per-sample attack objective and logits, without a gradient."""
        with no_grad():
            logits = self.forward(Tensor(x))
            value = attack_objective(logits, labels, spec, targets)
        return value.data.copy(), logits.data

    def objective_and_gradient(
        self, x: np.ndarray, labels: np.ndarray, spec: AttackSpec, targets: Optional[np.ndarray]
    ) -> ObjectiveAndGradient:
        """Per-sample attack objective, its input gradient and the logits.

        :param x: Inputs of shape (B, C, H, W).
        :param labels: True labels of shape (B,).
        :param spec: Selects loss and targeting.
        :param targets: Target labels of targeted attacks.
        """
        with tape_scope():
            x_tensor = Tensor(x, requires_grad=True)
            logits = self.forward(x_tensor)
            value = attack_objective(logits, labels, spec, targets)
            (gradient,) = grad(ops.sum(value), [x_tensor])
        return value.data.copy(), gradient.copy(), logits.data.copy()


class StaticClassifier(ModelUnderAttack):
    """A trained model with frozen parameters and train-time statistics."""

    def __init__(self, model: Model):
        """Wrap the model; it is switched to eval mode.

        :param model: The model to attack.
        """
        self.model = model
        self.model.eval()
        self.num_classes = model.num_classes

    def forward(self, x: Tensor) -> Tensor:
        """Logits of the model."""
        return self.model(x)


class BlackBoxModel:
    """Gradient-free facade which only answers logit queries and counts them."""

    def __init__(self, target: ModelUnderAttack):
        """Wrap a model.

        :param target: The model answering the queries.
        """
        self._target = target
        self.num_classes = target.num_classes
        self.queries = 0

    def begin_batch(self, x: np.ndarray) -> None:
        """Start attacking a new batch."""
        self._target.begin_batch(x)

    def query(self, x: np.ndarray) -> np.ndarray:
        """Logits for a batch of inputs; every call costs one query."""
        self.queries += 1
        return self._target.query(x)
