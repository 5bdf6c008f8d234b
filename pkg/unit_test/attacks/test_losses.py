import unittest

import numpy as np

from dentlab.attacks.losses import (
    attack_objective,
    dlr_loss,
    dlr_targeted_loss,
    is_successful,
    margin_loss,
    runner_up_targets,
)
from dentlab.attacks.spec import AttackLoss, AttackSpec, InvalidAttackSpecException
from dentlab.autodiff.tensor import Tensor, float64_mode


class DlrLossTest(unittest.TestCase):
    def test__dlr_loss__hand_evaluation(self) -> None:
        # Act
        loss = dlr_loss(Tensor([[3.0, 2.0, 1.0, 0.0]]), np.array([0]))

        # Assert
        self.assertAlmostEqual(float(loss.data[0]), -0.5, places=6)

    def test__dlr_loss__positive_affine_invariance(self) -> None:
        # Arrange
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(20, 6))
        labels = rng.integers(0, 6, size=20)
        scale = rng.uniform(0.1, 10.0)
        shift = rng.normal() * 5

        # Act
        with float64_mode():
            plain = dlr_loss(Tensor(logits), labels).data
            transformed = dlr_loss(Tensor(scale * logits + shift), labels).data

        # Assert
        np.testing.assert_allclose(transformed, plain, rtol=1e-9, atol=1e-9)

    def test__dlr_loss__tie_with_runner_up_is_zero(self) -> None:
        # Act
        loss = dlr_loss(Tensor([[2.0, 2.0, 1.0, 0.0]]), np.array([0]))

        # Assert
        self.assertEqual(float(loss.data[0]), 0.0)

    def test__dlr_loss__too_few_classes(self) -> None:
        # Act / Assert
        with self.assertRaises(InvalidAttackSpecException):
            dlr_loss(Tensor([[1.0, 0.0, 0.0]]), np.array([0]))

    def test__dlr_targeted_loss__hand_evaluation(self) -> None:
        # Act
        loss = dlr_targeted_loss(Tensor([[3.0, 2.0, 1.0, 0.0]]), np.array([0]), np.array([1]))

        # Assert
        self.assertAlmostEqual(float(loss.data[0]), -0.4, places=6)


class ObjectiveTest(unittest.TestCase):
    def test__margin_loss__sign_marks_misclassification(self) -> None:
        # Act
        loss = margin_loss(Tensor([[2.0, 1.0], [0.0, 3.0]]), np.array([0, 0]))

        # Assert
        np.testing.assert_allclose(loss.data, [-1.0, 3.0])

    def test__runner_up_targets__second_largest(self) -> None:
        # Act
        targets = runner_up_targets(np.array([[0.1, 0.7, 0.2], [5.0, 1.0, 3.0]]))

        # Assert
        np.testing.assert_array_equal(targets, [2, 2])

    def test__attack_objective__targeted_needs_targets(self) -> None:
        # Arrange
        spec = AttackSpec(loss=AttackLoss.MARGIN, targeted=True)

        # Act / Assert
        with self.assertRaises(InvalidAttackSpecException):
            attack_objective(Tensor([[1.0, 0.0]]), np.array([0]), spec)

    def test__attack_objective__targeted_cross_entropy_is_negated(self) -> None:
        # Arrange
        logits = Tensor([[0.0, 0.0]])
        spec = AttackSpec(targeted=True)

        # Act
        value = attack_objective(logits, np.array([0]), spec, np.array([1]))

        # Assert
        self.assertAlmostEqual(float(value.data[0]), -np.log(2), places=6)

    def test__is_successful__untargeted_and_targeted(self) -> None:
        # Arrange
        logits = np.array([[0.0, 1.0, 2.0], [3.0, 0.0, 1.0]])
        labels = np.array([2, 2])

        # Act / Assert
        np.testing.assert_array_equal(is_successful(logits, labels, False), [False, True])
        np.testing.assert_array_equal(
            is_successful(logits, labels, True, np.array([1, 0])), [False, True]
        )
