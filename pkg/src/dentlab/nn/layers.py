import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from dentlab.autodiff import ops
from dentlab.autodiff.tensor import ShapeMismatchException, Tensor, default_dtype

logger = logging.getLogger("dentlab")

Shape = Tuple[int, ...]
NamedTensor = Tuple[str, Tensor]


class DegenerateVarianceException(Exception):
    """Thrown when batch statistics are requested over a single value per channel."""

    ...  # pragma: no cover


class Granularity(Enum):
    """Whether normalization affine parameters are shared by a batch or held per sample."""

    BATCH_WISE = "batch-wise"
    SAMPLE_WISE = "sample-wise"


class StatsMode(Enum):
    """Which statistics normalization layers use outside of training."""

    TRAIN_TIME = "train-time"
    TEST_TIME = "test-time"


@dataclass
class BatchNormState:
    """Statistics and affine parameters of one normalization layer."""

    mu: np.ndarray
    """Running per-channel mean gathered during training."""
    var: np.ndarray
    """Running per-channel variance gathered during training."""
    gamma: Tensor
    """Affine scale, (C,) batch-wise or (B, C) sample-wise."""
    beta: Tensor
    """Affine shift, same shape as gamma."""
    granularity: Granularity = Granularity.BATCH_WISE
    """Whether gamma and beta carry a leading batch dimension."""
    stats_mode: StatsMode = StatsMode.TRAIN_TIME
    """Statistics used outside of training."""
    eps: float = 1e-5
    """Added to the variance before the square root."""
    momentum: float = 0.1
    """Weight of the newest batch in the running statistics."""
    batch_mu: Optional[np.ndarray] = None
    """Mean of the last batch normalized with test-time statistics."""
    batch_var: Optional[np.ndarray] = None
    """Variance of the last batch normalized with test-time statistics."""

    @property
    def channels(self) -> int:
        """Number of channels normalized by this layer."""
        return int(self.mu.shape[0])

    def ensure_batch(self, batch_size: int) -> None:
        """Replicate batch-wise affine values along a new batch dimension.

        Only has an effect for sample-wise granularity while gamma is still per channel.

        :param batch_size: Number of samples of the batch about to be normalized.
        """
        if self.granularity != Granularity.SAMPLE_WISE or self.gamma.ndim == 2:
            return
        self.gamma.data = np.tile(self.gamma.data, (batch_size, 1))
        self.beta.data = np.tile(self.beta.data, (batch_size, 1))
        self.gamma.zero_grad()
        self.beta.zero_grad()


def _affine_view(param: Tensor, batch_size: int, name: str) -> Tensor:
    if param.ndim == 1:
        return ops.reshape(param, (1, param.shape[0], 1, 1))
    if param.shape[0] != batch_size:
        raise ShapeMismatchException(
            "batchnorm", param.shape, (batch_size,), detail=f"sample-wise {name} batch size"
        )
    return ops.reshape(param, (batch_size, param.shape[1], 1, 1))


def batchnorm_forward(
    x: Tensor,
    state: BatchNormState,
    use_batch_stats: bool,
    running_update: bool = False,
) -> Tensor:
    """Normalize x per channel and apply the affine transform of `state`.

    With batch statistics the mean and variance are differentiable functions of x. They are
    written back to `state`: into the running averages when `running_update` is set (training),
    into `batch_mu` and `batch_var` otherwise (test-time estimation).

    :param x: Input of shape (B, C, H, W).
    :param state: Normalization state of the layer.
    :param use_batch_stats: Normalize with the statistics of this batch instead of the stored
        running statistics.
    :param running_update: Fold the batch statistics into the running statistics.
    :return: Output of shape (B, C, H, W).
    """
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ShapeMismatchException(
            "batchnorm", x.shape, (state.channels,), detail="channel count differs"
        )
    b, _, h, w = x.shape
    if use_batch_stats:
        if b * h * w == 1:
            raise DegenerateVarianceException(
                "Batch statistics need more than one value per channel, got batch size 1 with "
                "1x1 spatial extent."
            )
        mean = ops.mean(x, axis=(0, 2, 3), keepdims=True)
        centered = ops.sub(x, mean)
        var = ops.mean(ops.mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        batch_mu = mean.data.reshape(-1).copy()
        batch_var = var.data.reshape(-1).copy()
        if running_update:
            count = b * h * w
            unbiased = batch_var * count / max(count - 1, 1)
            state.mu = (1 - state.momentum) * state.mu + state.momentum * batch_mu
            state.var = (1 - state.momentum) * state.var + state.momentum * unbiased
        else:
            state.batch_mu = batch_mu
            state.batch_var = batch_var
    else:
        shape = (1, state.channels, 1, 1)
        centered = ops.sub(x, Tensor(state.mu.reshape(shape).astype(x.data.dtype)))
        var = Tensor(state.var.reshape(shape).astype(x.data.dtype))

    eps = Tensor(np.asarray(state.eps, dtype=x.data.dtype))
    inv_std = ops.div(Tensor(np.ones((), dtype=x.data.dtype)), ops.sqrt(ops.add(var, eps)))
    normalized = ops.mul(centered, inv_std)
    gamma = _affine_view(state.gamma, b, "gamma")
    beta = _affine_view(state.beta, b, "beta")
    return ops.add(ops.mul(normalized, gamma), beta)


class Layer:
    """A differentiable building block of a model."""

    training: bool = False
    """Whether the layer is in training mode."""

    def forward(self, x: Tensor) -> Tensor:
        """Compute the layer output.

        :param x: Input tensor.
        :return: Output tensor.
        """
        raise NotImplementedError  # pragma: no cover

    def __call__(self, x: Tensor) -> Tensor:
        """Alias of forward."""
        return self.forward(x)

    def named_parameters(self, prefix: str) -> List[NamedTensor]:
        """Trainable parameters in declaration order.

        :param prefix: Dotted name of this layer within the model.
        """
        return []

    def named_batchnorms(self, prefix: str) -> List[Tuple[str, "BatchNorm2d"]]:
        """Normalization layers within this layer, in declaration order."""
        return []

    def children(self) -> List["Layer"]:
        """Direct sublayers."""
        return []

    def set_training(self, training: bool) -> None:
        """Switch training mode of this layer and its sublayers."""
        self.training = training
        for child in self.children():
            child.set_training(training)

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """Analytic floating point operation count of a forward pass.

        :param in_shape: Input shape including the batch dimension.
        :return: Operation count and output shape.
        """
        return 0, in_shape


def _he_normal(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(default_dtype())


class Conv2d(Layer):
    """Square-kernel convolution without bias; a normalization layer always follows."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ):
        """Create the layer with He-initialized filters.

        :param in_channels: Channels of the input.
        :param out_channels: Number of filters.
        :param kernel_size: Spatial size of the filters.
        :param rng: Random generator used for initialization.
        :param stride: Step between windows.
        :param padding: Zero padding on every spatial side.
        """
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Tensor(
            _he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in),
            requires_grad=True,
        )
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        """Convolve x with the filters."""
        return ops.conv2d(x, self.weight, stride=self.stride, padding=self.padding)

    def named_parameters(self, prefix: str) -> List[NamedTensor]:
        """The filter bank."""
        return [(f"{prefix}.weight", self.weight)]

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """Two operations per multiply-accumulate."""
        b, _, h, w = in_shape
        o, c, kh, kw = self.weight.shape
        h_out = (h + 2 * self.padding - kh) // self.stride + 1
        w_out = (w + 2 * self.padding - kw) // self.stride + 1
        return 2 * b * o * h_out * w_out * c * kh * kw, (b, o, h_out, w_out)


class BatchNorm2d(Layer):
    """Batch normalization over (B, H, W) per channel."""

    def __init__(self, channels: int):
        """Create the layer with unit scale, zero shift and unit running variance.

        :param channels: Number of channels.
        """
        dtype = default_dtype()
        self.state = BatchNormState(
            mu=np.zeros(channels, dtype=dtype),
            var=np.ones(channels, dtype=dtype),
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        )

    def forward(self, x: Tensor) -> Tensor:
        """Normalize x with batch statistics when training or estimating at test time."""
        self.state.ensure_batch(x.shape[0])
        use_batch_stats = self.training or self.state.stats_mode == StatsMode.TEST_TIME
        return batchnorm_forward(x, self.state, use_batch_stats, running_update=self.training)

    def named_parameters(self, prefix: str) -> List[NamedTensor]:
        """Affine scale and shift."""
        return [(f"{prefix}.gamma", self.state.gamma), (f"{prefix}.beta", self.state.beta)]

    def named_batchnorms(self, prefix: str) -> List[Tuple[str, "BatchNorm2d"]]:
        """This layer."""
        return [(prefix, self)]

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """Normalization plus affine transform: four operations per element."""
        return 4 * int(np.prod(in_shape)), in_shape


class ReLU(Layer):
    """Rectified linear unit."""

    def forward(self, x: Tensor) -> Tensor:
        """Elementwise max(x, 0)."""
        return ops.relu(x)

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """One comparison per element."""
        return int(np.prod(in_shape)), in_shape


class AvgPool2d(Layer):
    """Non-overlapping average pooling."""

    def __init__(self, size: int):
        """Create the layer.

        :param size: Side of the square pooling window.
        """
        self.size = size

    def forward(self, x: Tensor) -> Tensor:
        """Average over every size x size window."""
        return ops.avgpool2d(x, self.size)

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """One addition per input element."""
        b, c, h, w = in_shape
        return int(np.prod(in_shape)), (b, c, h // self.size, w // self.size)


class GlobalAvgPool(Layer):
    """Mean over the spatial dimensions, (B, C, H, W) to (B, C)."""

    def forward(self, x: Tensor) -> Tensor:
        """Average every channel."""
        return ops.mean(x, axis=(2, 3))

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """One addition per input element."""
        return int(np.prod(in_shape)), in_shape[:2]


class Flatten(Layer):
    """(B, ...) to (B, features)."""

    def forward(self, x: Tensor) -> Tensor:
        """Collapse all but the batch dimension."""
        return ops.reshape(x, (x.shape[0], -1))

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """Free."""
        return 0, (in_shape[0], int(np.prod(in_shape[1:])))


class Linear(Layer):
    """Affine map of feature vectors, x @ W + b."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        """Create the layer with uniform initialization in +-1/sqrt(in_features).

        :param in_features: Size of the input vectors.
        :param out_features: Size of the output vectors.
        :param rng: Random generator used for initialization.
        """
        bound = 1.0 / math.sqrt(in_features)
        dtype = default_dtype()
        self.weight = Tensor(
            rng.uniform(-bound, bound, (in_features, out_features)).astype(dtype),
            requires_grad=True,
        )
        self.bias = Tensor(
            rng.uniform(-bound, bound, (out_features,)).astype(dtype), requires_grad=True
        )

    def forward(self, x: Tensor) -> Tensor:
        """Apply the affine map."""
        return ops.add(ops.matmul(x, self.weight), self.bias)

    def named_parameters(self, prefix: str) -> List[NamedTensor]:
        """Weight matrix and bias."""
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """Matrix product plus bias."""
        n_in, n_out = self.weight.shape
        return 2 * in_shape[0] * n_in * n_out + in_shape[0] * n_out, (in_shape[0], n_out)


class Sequential(Layer):
    """Layers applied one after another."""

    def __init__(self, layers: List[Layer]):
        """Create the container.

        :param layers: Layers in application order.
        """
        self.layers = layers

    def forward(self, x: Tensor) -> Tensor:
        """Apply every layer in turn."""
        for layer in self.layers:
            x = layer(x)
        return x

    def children(self) -> List[Layer]:
        """The contained layers."""
        return list(self.layers)

    def named_parameters(self, prefix: str) -> List[NamedTensor]:
        """Parameters of all layers, prefixed with the layer index."""
        result = []
        for index, layer in enumerate(self.layers):
            result.extend(layer.named_parameters(f"{prefix}.{index}" if prefix else str(index)))
        return result

    def named_batchnorms(self, prefix: str) -> List[Tuple[str, "BatchNorm2d"]]:
        """Normalization layers of all layers, prefixed with the layer index."""
        result = []
        for index, layer in enumerate(self.layers):
            result.extend(layer.named_batchnorms(f"{prefix}.{index}" if prefix else str(index)))
        return result

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """Sum over the layers."""
        total = 0
        shape = in_shape
        for layer in self.layers:
            flops, shape = layer.forward_flops(shape)
            total += flops
        return total, shape


class ResidualBlock(Layer):
    """Two 3x3 conv-BN stages plus a shortcut, followed by a ReLU.

    The shortcut is a strided 1x1 conv-BN when the stride or channel count changes.
    """

    def __init__(
        self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator
    ):
        """Create the block.

        :param in_channels: Channels of the input.
        :param out_channels: Channels of the output.
        :param stride: Stride of the first conv and the shortcut.
        :param rng: Random generator used for initialization.
        """
        self.body = Sequential(
            [
                Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1),
                BatchNorm2d(out_channels),
                ReLU(),
                Conv2d(out_channels, out_channels, 3, rng, padding=1),
                BatchNorm2d(out_channels),
            ]
        )
        self.shortcut: Optional[Sequential] = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Sequential(
                [
                    Conv2d(in_channels, out_channels, 1, rng, stride=stride),
                    BatchNorm2d(out_channels),
                ]
            )

    def forward(self, x: Tensor) -> Tensor:
        """relu(body(x) + shortcut(x))."""
        skip = x if self.shortcut is None else self.shortcut(x)
        return ops.relu(ops.add(self.body(x), skip))

    def children(self) -> List[Layer]:
        """Body and, when present, the projection shortcut."""
        return [self.body] if self.shortcut is None else [self.body, self.shortcut]

    def named_parameters(self, prefix: str) -> List[NamedTensor]:
        """Body parameters followed by shortcut parameters."""
        result = self.body.named_parameters(f"{prefix}.body")
        if self.shortcut is not None:
            result.extend(self.shortcut.named_parameters(f"{prefix}.shortcut"))
        return result

    def named_batchnorms(self, prefix: str) -> List[Tuple[str, "BatchNorm2d"]]:
        """Body normalization layers followed by the shortcut one."""
        result = self.body.named_batchnorms(f"{prefix}.body")
        if self.shortcut is not None:
            result.extend(self.shortcut.named_batchnorms(f"{prefix}.shortcut"))
        return result

    def forward_flops(self, in_shape: Shape) -> Tuple[int, Shape]:
        """Body, shortcut, addition and ReLU."""
        flops, out_shape = self.body.forward_flops(in_shape)
        if self.shortcut is not None:
            flops += self.shortcut.forward_flops(in_shape)[0]
        return flops + 2 * int(np.prod(out_shape)), out_shape


def iter_layers(layer: Layer) -> List[Layer]:
    """The layer and all of its sublayers, depth first in declaration order."""
    result = [layer]
    for child in layer.children():
        result.extend(iter_layers(child))
    return result
