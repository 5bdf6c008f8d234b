"""Differentiable Gaussian input smoothing with a learnable width.

The width is stored unconstrained as ``u`` and mapped to ``sigma = max(softplus(u) - ln 2, 0)``
so ``u = 0`` gives ``sigma = 0`` and gradient steps cannot make the width negative.
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from dentlab.autodiff import ops
from dentlab.autodiff.tensor import ShapeMismatchException, Tensor, default_dtype

MAX_RADIUS = 7
SOFTPLUS_ZERO = math.log(2.0)
SIGMA_EPSILON = 1e-6


class InvalidSmoothingException(Exception):
    """Thrown when a negative smoothing width is requested."""

    ...  # pragma: no cover


def _softplus_inverse(value: np.ndarray) -> np.ndarray:
    return np.where(value > 20.0, value, np.log(np.expm1(np.maximum(value, 1e-30))))


@dataclass
class SmoothingParams:
    """Width of the Gaussian smoother, one shared value or one per sample."""

    raw: Tensor
    """Unconstrained parameter u of shape (1,) when shared, (B,) when per sample."""

    @classmethod
    def from_sigma(
        cls, sigma: Union[float, np.ndarray], batch_size: int = 1
    ) -> "SmoothingParams":
        """Create parameters which map to the given width.

        :param sigma: Width, or one width per sample.
        :param batch_size: Number of copies of a scalar width (1 for a shared width).
        :return: Parameters which require a gradient.
        """
        values = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (batch_size,)).copy()
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidSmoothingException(f"Smoothing width must be finite and >= 0: {values}")
        raw = np.where(values == 0, 0.0, _softplus_inverse(values + SOFTPLUS_ZERO))
        return cls(raw=Tensor(raw.astype(default_dtype()), requires_grad=True))

    @property
    def per_sample(self) -> bool:
        """Whether every sample has its own width."""
        return self.raw.shape[0] > 1

    def sigma(self) -> Tensor:
        """The width as a differentiable function of the raw parameter."""
        shifted = ops.sub(ops.softplus(self.raw), Tensor(np.asarray(SOFTPLUS_ZERO)))
        return ops.clamp(shifted, 0.0, None)

    def sigma_values(self) -> np.ndarray:
        """Current widths as an array."""
        raw = self.raw.data.astype(np.float64)
        return np.maximum(np.log1p(np.exp(-np.abs(raw))) + np.maximum(raw, 0) - SOFTPLUS_ZERO, 0.0)

    def radius(self) -> int:
        """Kernel radius ceil(3 sigma) of the widest kernel, capped at 7."""
        return kernel_radius(float(np.max(self.sigma_values())))


def kernel_radius(sigma: float) -> int:
    """Radius ceil(3 sigma), capped at 7; widths below 1e-6 count as 0.

    :param sigma: Width of the Gaussian.
    """
    if sigma < 0:
        raise InvalidSmoothingException(f"Smoothing width must be >= 0, got {sigma}")
    if sigma < SIGMA_EPSILON:
        return 0
    return min(int(math.ceil(3.0 * sigma)), MAX_RADIUS)


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    """Normalized discrete Gaussian weights at offsets -radius..radius.

    :param sigma: Width of the Gaussian; 0 gives the unit impulse.
    :param radius: Number of taps on each side of the center.
    """
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma + 1e-12))
    return weights / weights.sum()


def gaussian_smooth(x: Tensor, params: SmoothingParams) -> Tensor:
    """Blur every channel of x with a normalized separable Gaussian of width sigma.

    The radius is recomputed from the current width on every call. Borders are padded by
    replicating edge pixels so constant images stay constant. Differentiable with respect to x
    and the width.

    :param x: Images of shape (B, C, H, W).
    :param params: Shared width or one width per sample.
    :return: Smoothed images; x itself when every width is 0.
    """
    if x.ndim != 4:
        raise ShapeMismatchException("gaussian_smooth", x.shape, detail="expected (B, C, H, W)")
    if params.per_sample and params.raw.shape[0] != x.shape[0]:
        raise ShapeMismatchException(
            "gaussian_smooth", x.shape, params.raw.shape, detail="one width per sample"
        )
    radius = params.radius()
    if radius == 0:
        return x

    sigma = ops.reshape(params.sigma(), (-1, 1))
    offsets = np.arange(-radius, radius + 1, dtype=x.data.dtype)
    squared = Tensor((offsets**2).reshape(1, -1))
    denominator = ops.add(ops.mul(ops.mul(sigma, sigma), Tensor(np.asarray(2.0))), Tensor(1e-12))
    weights = ops.exp(ops.neg(ops.div(squared, denominator)))
    weights = ops.div(weights, ops.sum(weights, axis=1, keepdims=True))
    taps = 2 * radius + 1
    count = weights.shape[0]

    padded = ops.pad(x, ((0, 0), (0, 0), (radius, radius), (radius, radius)), mode="edge")
    horizontal = ops.depthwise_conv2d(padded, ops.reshape(weights, (count, 1, taps)))
    return ops.depthwise_conv2d(horizontal, ops.reshape(weights, (count, taps, 1)))
