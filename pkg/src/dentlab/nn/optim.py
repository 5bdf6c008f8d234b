"""Gradient descent optimizers operating on the accumulated gradients of tensors."""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from dentlab.autodiff.tensor import Tensor


@dataclass
class ParamGroup:
    """Tensors sharing a learning rate."""

    params: List[Tensor]
    """The tensors updated with this learning rate."""
    lr: float
    """Learning rate of the group."""


class Optimizer:
    """Base class; subclasses implement `_update` for a single tensor."""

    def __init__(self, groups: List[ParamGroup]):
        """Create the optimizer.

        :param groups: Parameter groups; a tensor may occur in one group only.
        """
        self.groups = groups

    def params(self) -> List[Tensor]:
        """All tensors of all groups."""
        return [tensor for group in self.groups for tensor in group.params]

    def zero_grad(self) -> None:
        """Drop the gradients of all tensors."""
        for tensor in self.params():
            tensor.zero_grad()

    def grad_norm(self) -> float:
        """Global l2 norm of all present gradients."""
        total = 0.0
        for tensor in self.params():
            if tensor.grad is not None:
                total += float(np.sum(tensor.grad.astype(np.float64) ** 2))
        return math.sqrt(total)

    def step(self) -> None:
        """Update every tensor which has a gradient."""
        scale = self._grad_scale()
        for group in self.groups:
            for tensor in group.params:
                if tensor.grad is None:
                    continue
                self._update(tensor, tensor.grad * scale, group.lr)

    def _grad_scale(self) -> float:
        return 1.0

    def _update(self, tensor: Tensor, grad: np.ndarray, lr: float) -> None:
        raise NotImplementedError  # pragma: no cover


class SGD(Optimizer):
    """Stochastic gradient descent with heavy-ball momentum and L2 weight decay."""

    def __init__(
        self, groups: List[ParamGroup], momentum: float = 0.9, weight_decay: float = 0.0
    ):
        """Create the optimizer.

        :param groups: Parameter groups.
        :param momentum: Momentum coefficient.
        :param weight_decay: L2 penalty added to the gradient.
        """
        super().__init__(groups)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: Dict[int, np.ndarray] = {}

    def _update(self, tensor: Tensor, grad: np.ndarray, lr: float) -> None:
        if self.weight_decay:
            grad = grad + self.weight_decay * tensor.data
        velocity = self._velocity.get(id(tensor))
        velocity = grad if velocity is None else self.momentum * velocity + grad
        self._velocity[id(tensor)] = velocity
        tensor.data = (tensor.data - lr * velocity).astype(tensor.data.dtype)


@dataclass
class AdamMoments:
    """First and second moment accumulators of one tensor."""

    m: np.ndarray
    v: np.ndarray


@dataclass
class AdamState:
    """Everything Adam accumulates between steps."""

    step: int = 0
    """Number of completed steps."""
    moments: Dict[int, AdamMoments] = field(default_factory=dict)
    """Accumulators keyed by tensor id."""


class Adam(Optimizer):
    """Adam without weight decay, with optional clipping of the global gradient norm."""

    def __init__(
        self,
        groups: List[ParamGroup],
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        grad_clip: Optional[float] = None,
    ):
        """Create the optimizer.

        :param groups: Parameter groups.
        :param betas: Decay rates of the first and second moment.
        :param eps: Added to the root of the second moment.
        :param grad_clip: Rescale gradients so their global l2 norm is at most this value.
        """
        super().__init__(groups)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.state = AdamState()

    def reset(self) -> None:
        """Zero the step count and all moment accumulators."""
        self.state = AdamState()

    def step(self) -> None:
        """Advance the step count and update every tensor which has a gradient."""
        self.state.step += 1
        super().step()

    def _grad_scale(self) -> float:
        if self.grad_clip is None:
            return 1.0
        norm = self.grad_norm()
        return 1.0 if norm <= self.grad_clip else self.grad_clip / (norm + 1e-12)

    def _update(self, tensor: Tensor, grad: np.ndarray, lr: float) -> None:
        moments = self.state.moments.get(id(tensor))
        if moments is None or moments.m.shape != grad.shape:
            moments = AdamMoments(np.zeros_like(grad), np.zeros_like(grad))
            self.state.moments[id(tensor)] = moments
        moments.m = self.beta1 * moments.m + (1 - self.beta1) * grad
        moments.v = self.beta2 * moments.v + (1 - self.beta2) * grad * grad
        m_hat = moments.m / (1 - self.beta1**self.state.step)
        v_hat = moments.v / (1 - self.beta2**self.state.step)
        update = lr * m_hat / (np.sqrt(v_hat) + self.eps)
        tensor.data = (tensor.data - update).astype(tensor.data.dtype)


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Cosine decay from `base_lr` at epoch 0 towards 0 at `epochs`.

    :param base_lr: Initial learning rate.
    :param epoch: Zero-based epoch index.
    :param epochs: Total number of epochs.
    """
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(epochs, 1)))
