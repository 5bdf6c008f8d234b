import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Tuple

import numpy as np

from dentlab.autodiff.tensor import Tensor, no_grad
from dentlab.nn.layers import (
    AvgPool2d,
    BatchNorm2d,
    BatchNormState,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Layer,
    Linear,
    ReLU,
    ResidualBlock,
    Sequential,
)

logger = logging.getLogger("dentlab")


class UnknownArchitectureException(Exception):
    """Thrown when a model is requested for an architecture name which does not exist."""

    ...  # pragma: no cover


@dataclass
class Model:
    """A classifier f(x; theta) mapping (B, C, H, W) images to (B, num_classes) logits."""

    arch: str
    """Architecture name as accepted by `build_model`."""
    num_classes: int
    """Number of output logits."""
    in_channels: int
    """Channels of the input images."""
    image_size: int
    """Height and width of the input images."""
    net: Sequential
    """The layers in application order."""
    training: bool = field(default=False)
    """Train mode updates running statistics; eval mode is a pure function of the input."""

    def __call__(self, x: Tensor) -> Tensor:
        """Compute the logits of a batch."""
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        """Compute the logits of a batch.

        :param x: Images of shape (B, in_channels, image_size, image_size).
        :return: Logits of shape (B, num_classes).
        """
        return self.net(x)

    def train(self) -> None:
        """Switch to train mode."""
        self.training = True
        self.net.set_training(True)

    def eval(self) -> None:
        """Switch to eval mode."""
        self.training = False
        self.net.set_training(False)

    @property
    def layers(self) -> List[Layer]:
        """Top level layers in application order."""
        return self.net.layers

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        """All trainable parameters theta in declaration order."""
        return self.net.named_parameters("")

    def parameters(self) -> List[Tensor]:
        """All trainable parameters theta in declaration order."""
        return [tensor for _, tensor in self.named_parameters()]

    def batchnorms(self) -> List[Tuple[str, BatchNorm2d]]:
        """Normalization layers with their dotted names."""
        return self.net.named_batchnorms("")

    def bn_states(self) -> List[BatchNormState]:
        """The normalization state of every normalization layer."""
        return [layer.state for _, layer in self.batchnorms()]

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        """Parameters followed by running statistics, in the order checkpoints store them."""
        arrays = [(name, tensor.data) for name, tensor in self.named_parameters()]
        for name, layer in self.batchnorms():
            arrays.append((f"{name}.mu", layer.state.mu))
            arrays.append((f"{name}.var", layer.state.var))
        return arrays

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """Overwrite parameters and running statistics by name.

        :param arrays: Arrays keyed as in `named_arrays`; every name must be present with the
            same shape.
        :raises KeyError: If an array is missing.
        :raises ValueError: If an array has the wrong shape.
        """
        for name, current in self.named_arrays():
            if name not in arrays:
                raise KeyError(f"Array '{name}' is missing")
            if arrays[name].shape != current.shape:
                raise ValueError(
                    f"Array '{name}' has shape {arrays[name].shape}, expected {current.shape}"
                )
        for name, tensor in self.named_parameters():
            tensor.data = arrays[name].astype(tensor.data.dtype, copy=True)
        for name, layer in self.batchnorms():
            layer.state.mu = arrays[f"{name}.mu"].copy()
            layer.state.var = arrays[f"{name}.var"].copy()

    def copy(self) -> "Model":
        """Independent deep copy, e.g. for a worker process or a sample-wise expansion."""
        return copy.deepcopy(self)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Logits as an array, without recording on the tape."""
        with no_grad():
            return self.forward(Tensor(x)).data

    def forward_flops(self, batch_size: int) -> int:
        """Analytic operation count of one forward pass over a batch."""
        in_shape = (batch_size, self.in_channels, self.image_size, self.image_size)
        return self.net.forward_flops(in_shape)[0]


def _convnet_bn_small(
    num_classes: int, in_channels: int, image_size: int, rng: np.random.Generator
) -> Sequential:
    if image_size % 4:
        raise ValueError(f"convnet-bn-small needs an image size divisible by 4, got {image_size}")
    features = 32 * (image_size // 4) ** 2
    return Sequential(
        [
            Conv2d(in_channels, 16, 3, rng, padding=1),
            BatchNorm2d(16),
            ReLU(),
            AvgPool2d(2),
            Conv2d(16, 32, 3, rng, padding=1),
            BatchNorm2d(32),
            ReLU(),
            AvgPool2d(2),
            Flatten(),
            Linear(features, num_classes, rng),
        ]
    )


def _resnet_8_bn(
    num_classes: int, in_channels: int, image_size: int, rng: np.random.Generator
) -> Sequential:
    return Sequential(
        [
            Conv2d(in_channels, 16, 3, rng, padding=1),
            BatchNorm2d(16),
            ReLU(),
            ResidualBlock(16, 16, 1, rng),
            ResidualBlock(16, 32, 2, rng),
            ResidualBlock(32, 64, 2, rng),
            GlobalAvgPool(),
            Linear(64, num_classes, rng),
        ]
    )


ARCHITECTURES: Dict[str, Callable[[int, int, int, np.random.Generator], Sequential]] = {
    "convnet-bn-small": _convnet_bn_small,
    "resnet-8-bn": _resnet_8_bn,
}
"""Layer stack builders by architecture name."""


def build_model(
    arch: str, num_classes: int, seed: int, in_channels: int = 1, image_size: int = 28
) -> Model:
    """Create an initialized model with a normalization layer after every convolution.

    :param arch: One of 'convnet-bn-small' and 'resnet-8-bn'.
    :param num_classes: Number of classes, at least 2.
    :param seed: Seed of the parameter initialization.
    :param in_channels: Channels of the input images.
    :param image_size: Height and width of the input images.
    :return: The model in eval mode.
    """
    builder = ARCHITECTURES.get(arch)
    if builder is None:
        raise UnknownArchitectureException(
            f"Unknown architecture '{arch}'. Valid architectures: {', '.join(ARCHITECTURES)}"
        )
    if num_classes < 2:
        raise ValueError(f"num_classes must be at least 2, got {num_classes}")
    rng = np.random.default_rng(seed)
    model = Model(
        arch=arch,
        num_classes=num_classes,
        in_channels=in_channels,
        image_size=image_size,
        net=builder(num_classes, in_channels, image_size, rng),
    )
    model.eval()
    logger.debug("Built %s with %s parameters", arch, sum(p.size for p in model.parameters()))
    return model


def theta_checksum(model: Model, exclude_normalization: bool = True) -> float:
    """Order-sensitive checksum of the backbone parameters.

    :param model: The model.
    :param exclude_normalization: Leave out normalization scales and shifts.
    :return: A float which changes when any included parameter changes.
    """
    adapted = set()
    if exclude_normalization:
        for state in model.bn_states():
            adapted.add(id(state.gamma))
            adapted.add(id(state.beta))
    total = 0.0
    for index, tensor in enumerate(model.parameters()):
        if id(tensor) in adapted:
            continue
        total += float(np.sum(tensor.data.astype(np.float64) * (index + 1)))
        total += float(np.sum(np.abs(tensor.data.astype(np.float64))))
    return total
