import math
import unittest

import numpy as np

from dentlab.autodiff.tensor import Tensor
from dentlab.nn.optim import SGD, Adam, ParamGroup, cosine_lr


class SGDTest(unittest.TestCase):
    def test__step__plain_gradient_descent(self) -> None:
        # Arrange
        tensor = Tensor([1.0, 2.0], requires_grad=True)
        tensor.grad = np.array([0.5, -1.0], dtype=np.float32)
        optimizer = SGD([ParamGroup([tensor], lr=0.1)], momentum=0.0)

        # Act
        optimizer.step()

        # Assert
        np.testing.assert_allclose(tensor.data, [0.95, 2.1], rtol=1e-6)

    def test__step__momentum_accumulates(self) -> None:
        # Arrange
        tensor = Tensor([0.0], requires_grad=True)
        optimizer = SGD([ParamGroup([tensor], lr=1.0)], momentum=0.5)

        # Act
        for _ in range(2):
            tensor.grad = np.array([1.0], dtype=np.float32)
            optimizer.step()

        # Assert
        np.testing.assert_allclose(tensor.data, [-2.5])

    def test__step__skips_tensors_without_gradient(self) -> None:
        # Arrange
        tensor = Tensor([1.0], requires_grad=True)
        optimizer = SGD([ParamGroup([tensor], lr=1.0)], weight_decay=0.1)

        # Act
        optimizer.step()

        # Assert
        np.testing.assert_array_equal(tensor.data, [1.0])


class AdamTest(unittest.TestCase):
    def test__step__first_step_moves_by_learning_rate(self) -> None:
        # Arrange
        tensor = Tensor([1.0, -1.0], requires_grad=True)
        tensor.grad = np.array([3.0, -0.01], dtype=np.float32)
        optimizer = Adam([ParamGroup([tensor], lr=0.001)])

        # Act
        optimizer.step()

        # Assert
        np.testing.assert_allclose(tensor.data, [0.999, -0.999], rtol=1e-5)

    def test__grad_norm__clipping_scales_update(self) -> None:
        # Arrange
        tensor = Tensor([0.0, 0.0], requires_grad=True)
        tensor.grad = np.array([3.0, 4.0], dtype=np.float32)
        optimizer = Adam([ParamGroup([tensor], lr=0.1)], grad_clip=1.0)

        # Act
        norm = optimizer.grad_norm()
        scale = optimizer._grad_scale()

        # Assert
        self.assertAlmostEqual(norm, 5.0, places=5)
        self.assertAlmostEqual(scale, 0.2, places=5)

    def test__reset__forgets_moments(self) -> None:
        # Arrange
        tensor = Tensor([0.0], requires_grad=True)
        tensor.grad = np.array([1.0], dtype=np.float32)
        optimizer = Adam([ParamGroup([tensor], lr=0.1)])
        optimizer.step()

        # Act
        optimizer.reset()

        # Assert
        self.assertEqual(optimizer.state.step, 0)
        self.assertEqual(optimizer.state.moments, {})


class CosineLrTest(unittest.TestCase):
    def test__cosine_lr__schedule(self) -> None:
        # Act / Assert
        self.assertAlmostEqual(cosine_lr(0.1, 0, 10), 0.1)
        self.assertAlmostEqual(cosine_lr(0.1, 5, 10), 0.05)
        self.assertAlmostEqual(cosine_lr(0.1, 9, 10), 0.05 * (1 + math.cos(math.pi * 0.9)))
