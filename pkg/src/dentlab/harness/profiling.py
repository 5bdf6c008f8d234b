"""Wall time and analytic operation counts of defended predictions."""

import logging
import time
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from dentlab.defense.config import DefenseConfig, Smoothing
from dentlab.defense.dent import DentDefense
from dentlab.nn.layers import Granularity
from dentlab.nn.models import Model
from dentlab.nn.smoothing import kernel_radius

logger = logging.getLogger("dentlab")

BACKWARD_FACTOR = 3
"""Forward plus backward of one update, in forward passes."""
ADAM_OPS_PER_PARAMETER = 12
DEFAULT_PROFILE_STEPS = (0, 1, 5, 10)


@dataclass
class ProfileRow:
    """Cost of defending one batch with a number of adaptation steps."""

    steps: int
    seconds: float
    flops: int
    flops_relative: float
    """flops relative to the static prediction of the same batch."""
    seconds_relative: float


def smoothing_flops(config: DefenseConfig, image_shape: Sequence[int], batch_size: int) -> int:
    """Operations of one separable blur at the initial width, 0 when smoothing is off."""
    if config.is_static or config.smoothing == Smoothing.NONE:
        return 0
    taps = 2 * kernel_radius(config.sigma_init) + 1
    elements = batch_size * int(np.prod(image_shape))
    return 2 * 2 * taps * elements


def adapted_parameter_count(model: Model, config: DefenseConfig, batch_size: int) -> int:
    """Number of values the defense optimizer updates for one batch."""
    count = 0
    if config.adapt_affine:
        per_batch = batch_size if config.granularity == Granularity.SAMPLE_WISE else 1
        count += sum(2 * bn.channels * per_batch for bn in model.bn_states())
    if config.adapt_sigma:
        count += batch_size if config.per_sample_sigma else 1
    return count


def analytic_flops(model: Model, config: DefenseConfig, batch_size: int) -> int:
    """Closed-form cost of predicting one batch with the defense.

    cost(steps) = forward + steps * (3 * forward + optimizer), where forward includes the
    input blur. Zero steps is the static forward pass.

    :param model: The static model.
    :param config: Defense settings; only steps, smoothing and the adapted set matter.
    :param batch_size: Samples per batch.
    """
    static = model.forward_flops(batch_size)
    if config.is_static:
        return static
    image_shape = (model.in_channels, model.image_size, model.image_size)
    forward = static + smoothing_flops(config, image_shape, batch_size)
    optimizer = ADAM_OPS_PER_PARAMETER * adapted_parameter_count(model, config, batch_size)
    return forward + config.steps * (BACKWARD_FACTOR * forward + optimizer)


def _time_defense(defense: DentDefense, x: np.ndarray, repeats: int) -> float:
    start = time.perf_counter()
    for _ in range(repeats):
        defense(x)
    return (time.perf_counter() - start) / repeats


def profile(
    model: Model,
    config: DefenseConfig,
    x: np.ndarray,
    steps_values: Sequence[int] = DEFAULT_PROFILE_STEPS,
    repeats: int = 1,
) -> List[ProfileRow]:
    """Time and count the defended prediction of a batch for several step counts.

    Every configuration is warmed up once before it is timed.

    :param model: The static model.
    :param config: Defense settings; steps is replaced by each value of `steps_values`.
    :param x: The batch, shape (B, C, H, W).
    :param steps_values: Defense step counts to profile.
    :param repeats: Timed repetitions per step count.
    :return: One row per step count, in the given order.
    """
    batch_size = x.shape[0]
    baseline_config = config.with_overrides(steps=0)
    baseline_flops = analytic_flops(model, baseline_config, batch_size)
    baseline_defense = DentDefense(model, baseline_config)
    baseline_defense(x)
    baseline_seconds = _time_defense(baseline_defense, x, repeats)

    rows = []
    for steps in steps_values:
        step_config = config.with_overrides(steps=steps)
        defense = DentDefense(model, step_config)
        defense(x)
        seconds = _time_defense(defense, x, repeats)
        flops = analytic_flops(model, step_config, batch_size)
        rows.append(
            ProfileRow(
                steps=steps,
                seconds=seconds,
                flops=flops,
                flops_relative=flops / baseline_flops,
                seconds_relative=seconds / baseline_seconds if baseline_seconds > 0 else 1.0,
            )
        )
        logger.info(
            "Profiled %s steps: %.4fs, %d flops (%.1fx static)",
            steps,
            seconds,
            flops,
            flops / baseline_flops,
        )
    return rows
