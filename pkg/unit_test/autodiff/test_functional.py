import math
import unittest

import numpy as np

from dentlab.autodiff import ops
from dentlab.autodiff.functional import (
    InvalidProbabilitiesException,
    check_probabilities,
    cross_entropy,
    entropy,
)
from dentlab.autodiff.tensor import Tensor, float64_mode, grad, tape_scope


class EntropyTest(unittest.TestCase):
    def test__entropy__one_hot_is_zero(self) -> None:
        # Act
        result = entropy(Tensor([[1.0, 0.0, 0.0, 0.0]]))

        # Assert
        self.assertAlmostEqual(float(result.data[0]), 0.0, places=6)

    def test__entropy__uniform_over_ten(self) -> None:
        # Act
        result = entropy(Tensor(np.full((1, 10), 0.1)))

        # Assert
        self.assertAlmostEqual(float(result.data[0]), math.log(10), places=5)

    def test__entropy__fair_coin(self) -> None:
        # Act
        result = entropy(Tensor([[0.5, 0.5]]))

        # Assert
        self.assertAlmostEqual(float(result.data[0]), math.log(2), places=6)

    def test__entropy__bounded_for_random_rows(self) -> None:
        # Arrange
        rng = np.random.default_rng(5)
        probs = ops.softmax(Tensor(rng.normal(size=(50, 7)) * 4), axis=1)

        # Act
        result = entropy(probs).data

        # Assert
        self.assertTrue(np.all(result >= -1e-6))
        self.assertTrue(np.all(result <= math.log(7) + 1e-5))

    def test__entropy__row_not_summing_to_one(self) -> None:
        # Act / Assert
        with self.assertRaises(InvalidProbabilitiesException) as context:
            entropy(Tensor([[0.5, 0.5], [0.5, 0.4]]))
        self.assertEqual(context.exception.row, 1)

    def test__check_probabilities__negative_entry(self) -> None:
        # Act / Assert
        with self.assertRaises(InvalidProbabilitiesException):
            check_probabilities(np.array([[1.5, -0.5]]))

    def test__entropy__saturated_softmax_gradient_is_finite(self) -> None:
        # Arrange
        logits = Tensor([[80.0, 0.0, -80.0]], requires_grad=True)

        # Act
        with tape_scope():
            (d_logits,) = grad(ops.sum(entropy(ops.softmax(logits, axis=1))), [logits])

        # Assert
        self.assertTrue(np.all(np.isfinite(d_logits)))

    def test__entropy__gradient_matches_finite_differences(self) -> None:
        # Arrange
        rng = np.random.default_rng(2)
        values = rng.normal(size=(2, 4))
        h = 1e-5

        def total_entropy(array: np.ndarray) -> float:
            with float64_mode():
                return float(entropy(ops.softmax(Tensor(array), axis=1)).data.sum())

        expected = np.zeros_like(values)
        for position in np.ndindex(values.shape):
            upper = values.copy()
            upper[position] += h
            lower = values.copy()
            lower[position] -= h
            expected[position] = (total_entropy(upper) - total_entropy(lower)) / (2 * h)

        # Act
        with float64_mode(), tape_scope():
            logits = Tensor(values, requires_grad=True)
            (actual,) = grad(ops.sum(entropy(ops.softmax(logits, axis=1))), [logits])

        # Assert
        np.testing.assert_allclose(actual, expected, rtol=1e-4, atol=1e-8)


class CrossEntropyTest(unittest.TestCase):
    def test__cross_entropy__uniform_logits(self) -> None:
        # Act
        result = cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 3]))

        # Assert
        np.testing.assert_allclose(result.data, [math.log(4)] * 3, rtol=1e-6)

    def test__cross_entropy__confident_correct_is_small(self) -> None:
        # Act
        result = cross_entropy(Tensor([[10.0, -10.0]]), np.array([0]))

        # Assert
        self.assertLess(float(result.data[0]), 1e-6)
