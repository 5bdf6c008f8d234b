"""Defensive entropy minimization: test-time adaptation of normalization and input smoothing.

Only the normalization scales and shifts, the batch statistics and the smoothing width change
at test time. The backbone parameters are never written.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from dentlab.autodiff import ops
from dentlab.autodiff.tensor import Tensor, grad, no_grad, tape_scope
from dentlab.defense.config import DefenseConfig, FinalPassStats, Smoothing
from dentlab.defense.objective import defense_objective
from dentlab.nn.layers import BatchNormState, Granularity, StatsMode
from dentlab.nn.models import Model
from dentlab.nn.optim import Adam, ParamGroup
from dentlab.nn.smoothing import SmoothingParams, gaussian_smooth

logger = logging.getLogger("dentlab")


class DefenseStateException(Exception):
    """Thrown when a batch is adapted without resetting the defense first."""

    ...  # pragma: no cover


class MissingNormalizationException(Exception):
    """Thrown when dent is asked to adapt a model without normalization layers."""

    ...  # pragma: no cover


def expand_samplewise(model: Model, batch_size: Optional[int] = None) -> Model:
    """Copy of the model whose normalization scales and shifts are held per sample.

    The copy predicts exactly like the original until its per-sample values diverge.

    :param model: A model with normalization layers.
    :param batch_size: Replicate right away for this batch size; otherwise on the first
        forward pass.
    :raises MissingNormalizationException: If the model has no normalization layers.
    """
    if not model.batchnorms():
        raise MissingNormalizationException("dent requires normalization layers to adapt")
    expanded = model.copy()
    for state in expanded.bn_states():
        state.granularity = Granularity.SAMPLE_WISE
        if batch_size is not None:
            state.ensure_batch(batch_size)
    return expanded


@dataclass
class DefenseState:
    """Everything dent adapts for the current batch."""

    affine_snapshot: List[Tuple[np.ndarray, np.ndarray]]
    """Trained per-channel scale and shift of every normalization layer."""
    sigma: Optional[SmoothingParams] = None
    """Smoothing width, None without smoothing."""
    optimizer: Optional[Adam] = None
    """Adam over the adapted tensors of the current batch."""
    step_counter: int = 0
    """Completed updates since the last reset."""
    round_counter: int = 0
    """Completed adaptation rounds since the last reset."""
    fresh: bool = True
    """Whether nothing has been adapted since the last reset."""
    batch_size: Optional[int] = None
    """Size of the batch the state is prepared for."""
    sigma_trajectory: List[float] = field(default_factory=list)
    """Mean smoothing width after every update since the last reset."""
    events: List[str] = field(default_factory=list)
    """Non-finite objectives and other incidents since the defense was created."""


class DentDefense:
    """Entropy minimization around a private copy of a trained model."""

    def __init__(self, model: Model, config: DefenseConfig):
        """Wrap a model; the model passed in is never modified.

        :param model: The trained static model.
        :param config: Adaptation settings.
        :raises MissingNormalizationException: If adaptation is requested for a model without
            normalization layers.
        """
        self.config = config
        if config.granularity == Granularity.SAMPLE_WISE and not config.is_static:
            self.model = expand_samplewise(model)
        else:
            if not config.is_static and config.adapt_affine and not model.batchnorms():
                raise MissingNormalizationException("dent requires normalization layers to adapt")
            self.model = model.copy()
        self.model.eval()
        stats_mode = StatsMode.TRAIN_TIME if config.is_static else config.stats_mode
        for bn in self.model.bn_states():
            bn.stats_mode = stats_mode
        self.state = DefenseState(
            affine_snapshot=[
                (bn.gamma.data.copy(), bn.beta.data.copy()) for bn in self.model.bn_states()
            ]
        )
        self.reset()

    @property
    def num_classes(self) -> int:
        """Number of logits."""
        return self.model.num_classes

    @property
    def smoothing_active(self) -> bool:
        """Whether inputs are smoothed before the model."""
        return not self.config.is_static and self.config.smoothing != Smoothing.NONE

    def reset(self) -> None:
        """Restore the trained scales and shifts, drop batch statistics, width and optimizer.

        Idempotent.
        """
        for bn, (gamma, beta) in zip(self.model.bn_states(), self.state.affine_snapshot):
            bn.gamma.data = gamma.copy()
            bn.beta.data = beta.copy()
            bn.gamma.zero_grad()
            bn.beta.zero_grad()
            bn.batch_mu = None
            bn.batch_var = None
        self.state.sigma = (
            SmoothingParams.from_sigma(self.config.sigma_init) if self.smoothing_active else None
        )
        self.state.optimizer = None
        self.state.step_counter = 0
        self.state.round_counter = 0
        self.state.fresh = True
        self.state.batch_size = None
        self.state.sigma_trajectory = []

    def adapted_tensors(self) -> List[Tensor]:
        """Tensors the optimizer updates: scales and shifts, then the smoothing width."""
        tensors: List[Tensor] = []
        if self.config.adapt_affine:
            for bn in self.model.bn_states():
                tensors.extend([bn.gamma, bn.beta])
        if self.config.adapt_sigma and self.state.sigma is not None:
            tensors.append(self.state.sigma.raw)
        return tensors

    def begin_batch(self, batch_size: int) -> None:
        """Prepare the reset state for a batch: replicate per-sample values, create Adam.

        :param batch_size: Number of samples of the batch.
        """
        for bn in self.model.bn_states():
            bn.ensure_batch(batch_size)
        if self.smoothing_active and self.config.per_sample_sigma:
            self.state.sigma = SmoothingParams.from_sigma(self.config.sigma_init, batch_size)
        groups = []
        if self.config.adapt_affine:
            affine = [t for bn in self.model.bn_states() for t in (bn.gamma, bn.beta)]
            groups.append(ParamGroup(affine, self.config.model_lr))
        if self.config.adapt_sigma and self.state.sigma is not None:
            groups.append(ParamGroup([self.state.sigma.raw], self.config.sigma_lr))
        self.state.optimizer = None
        if groups and not self.config.is_static:
            self.state.optimizer = Adam(groups, grad_clip=self.config.grad_clip)
        self.state.batch_size = batch_size

    def forward(self, x: Tensor) -> Tensor:
        """Differentiable logits under the current state: smoothing, then the model."""
        if self.state.sigma is not None:
            x = gaussian_smooth(x, self.state.sigma)
        return self.model(x)

    def _snapshot_adapted(self) -> List[np.ndarray]:
        return [tensor.data.copy() for tensor in self.adapted_tensors()]

    def _restore_adapted(self, values: List[np.ndarray]) -> None:
        for tensor, value in zip(self.adapted_tensors(), values):
            tensor.data = value

    def _record_non_finite(self, value: float) -> None:
        message = (
            f"non-finite defense objective {value} at step {self.state.step_counter}, "
            f"kept the last finite state"
        )
        self.state.events.append(message)
        logger.warning("dent: %s", message)

    def _update(self, x: Tensor) -> bool:
        """One entropy descent step; False when the objective was not finite."""
        optimizer = self.state.optimizer
        assert optimizer is not None
        tensors = self.adapted_tensors()
        with tape_scope():
            logits = self.forward(x)
            if not np.all(np.isfinite(logits.data)):
                self._record_non_finite(float("nan"))
                return False
            objective = defense_objective(
                ops.softmax(logits, axis=1), self.config.objective, self.config.maxinf_weight
            )
            value = objective.item()
            if not math.isfinite(value):
                self._record_non_finite(value)
                return False
            gradients = grad(objective, tensors)
        for tensor, gradient in zip(tensors, gradients):
            tensor.grad = gradient
        optimizer.step()
        optimizer.zero_grad()
        self.state.step_counter += 1
        if self.state.sigma is not None:
            self.state.sigma_trajectory.append(float(np.mean(self.state.sigma.sigma_values())))
        return True

    def _run_steps(self, x: np.ndarray) -> None:
        x_tensor = Tensor(x)
        if self.state.optimizer is None:
            # Nothing to update: estimate the batch statistics only.
            with no_grad():
                self.forward(x_tensor)
            return
        for _ in range(self.config.steps):
            last_finite = self._snapshot_adapted()
            if not self._update(x_tensor):
                self._restore_adapted(last_finite)
                break
        self.state.fresh = False

    def adapt_batch(self, x: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        """Adapt to a batch from the reset state.

        :param x: The batch, shape (B, C, H, W).
        :raises DefenseStateException: If the defense was not reset since the last batch.
        :return: The adapted prediction function.
        """
        if not self.state.fresh:
            raise DefenseStateException(
                "adapt_batch needs a freshly reset defense; call reset() between batches"
            )
        self.begin_batch(x.shape[0])
        if not self.config.is_static:
            self._run_steps(x)
        self.state.round_counter += 1
        return self.predict

    def adapt_round(self, x: np.ndarray) -> None:
        """One adaptation round on x as seen by the defense during an attack.

        Every round starts from the reset state unless `carry_state` is configured, so the
        adapted state is a function of (x, trained values, steps) only.
        """
        if not self.config.carry_state or self.state.batch_size != x.shape[0]:
            self.reset()
            self.begin_batch(x.shape[0])
        if not self.config.is_static:
            self._run_steps(x)
        self.state.round_counter += 1

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Final prediction pass with the adapted values.

        With test-time statistics and `final_pass_stats=train`, the trained running statistics
        are used for this pass only.

        :return: Logits of shape (B, num_classes).
        """
        use_train_stats = (
            self.config.final_pass_stats == FinalPassStats.TRAIN
            and self.config.stats_mode == StatsMode.TEST_TIME
            and not self.config.is_static
        )
        states: List[BatchNormState] = self.model.bn_states() if use_train_stats else []
        for bn in states:
            bn.stats_mode = StatsMode.TRAIN_TIME
        try:
            with no_grad():
                return self.forward(Tensor(x)).data
        finally:
            for bn in states:
                bn.stats_mode = StatsMode.TEST_TIME

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Reset, adapt to x and predict it."""
        self.reset()
        return self.adapt_batch(x)(x)
