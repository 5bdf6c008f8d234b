import unittest

import numpy as np

from dentlab.attacks.classifier import BlackBoxModel, ModelUnderAttack, ObjectiveAndGradient
from dentlab.attacks.projection import check_feasible
from dentlab.attacks.spec import (
    AttackBudgetException,
    AttackKind,
    AttackSpec,
    InvalidAttackSpecException,
    Norm,
)
from dentlab.attacks.square import margin, patch_side, square_attack
from dentlab.autodiff import ops
from dentlab.autodiff.tensor import Tensor


class GradientFreeClassifier(ModelUnderAttack):
    def __init__(self, weights: np.ndarray):
        self.weights = Tensor(weights)
        self.num_classes = weights.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        return ops.matmul(ops.reshape(x, (x.shape[0], -1)), self.weights)

    def objective_and_gradient(
        self,
        x: np.ndarray,
        labels: np.ndarray,
        spec: AttackSpec,
        targets: object,
    ) -> ObjectiveAndGradient:
        raise AssertionError("The square attack asked for a gradient")


class SquareAttackTest(unittest.TestCase):
    def setUp(self) -> None:
        rng = np.random.default_rng(0)
        self.x = rng.uniform(0.3, 0.7, size=(5, 1, 8, 8)).astype(np.float32)
        self.labels = rng.integers(0, 3, size=5)
        self.classifier = GradientFreeClassifier(rng.normal(size=(64, 3)).astype(np.float32))
        self.model = BlackBoxModel(self.classifier)
        self.spec = AttackSpec(kind=AttackKind.SQUARE, epsilon=0.1, seed=1)

    def test__square_attack__single_query_is_stripe_initialization(self) -> None:
        # Act
        result = square_attack(self.model, self.x, self.labels, self.spec, query_budget=1)

        # Assert
        self.assertEqual(result.queries_or_steps, 1)
        np.testing.assert_allclose(np.abs(result.delta), 0.1, rtol=1e-6)
        np.testing.assert_array_equal(result.delta[:, :, 0, :], result.delta[:, :, 5, :])
        self.assertTrue(np.all(check_feasible(result.delta, self.x, Norm.LINF, 0.1)))

    def test__square_attack__zero_budget(self) -> None:
        # Act / Assert
        with self.assertRaises(AttackBudgetException):
            square_attack(self.model, self.x, self.labels, self.spec, query_budget=0)

    def test__square_attack__targeted_is_rejected(self) -> None:
        # Arrange
        spec = AttackSpec(kind=AttackKind.SQUARE, targeted=True)

        # Act / Assert
        with self.assertRaises(InvalidAttackSpecException):
            square_attack(self.model, self.x, self.labels, spec)

    def test__square_attack__bookkeeping_and_feasibility(self) -> None:
        for norm, epsilon in ((Norm.LINF, 0.1), (Norm.L2, 0.8)):
            # Arrange
            spec = AttackSpec(kind=AttackKind.SQUARE, norm=norm, epsilon=epsilon, seed=3)
            model = BlackBoxModel(self.classifier)

            # Act
            result = square_attack(model, self.x, self.labels, spec, query_budget=50)

            # Assert
            assert result.accepted is not None
            self.assertTrue(np.all(result.accepted <= result.queries_or_steps))
            self.assertLessEqual(result.queries_or_steps, 50)
            self.assertEqual(model.queries, result.queries_or_steps)
            self.assertTrue(np.all(check_feasible(result.delta, self.x, norm, epsilon)))

    def test__square_attack__reported_loss_is_final_margin(self) -> None:
        # Act
        result = square_attack(self.model, self.x, self.labels, self.spec, query_budget=30)

        # Assert
        final = margin(self.model.query(self.x + result.delta), self.labels)
        np.testing.assert_allclose(result.per_sample_loss, -final, rtol=1e-5, atol=1e-6)
        self.assertEqual(result.success_mask.tolist(), (final < 0).tolist())

    def test__square_attack__zero_epsilon(self) -> None:
        # Arrange
        spec = AttackSpec(kind=AttackKind.SQUARE, epsilon=0.0)

        # Act
        result = square_attack(self.model, self.x, self.labels, spec, query_budget=20)

        # Assert
        np.testing.assert_array_equal(result.delta, np.zeros_like(self.x))
        self.assertEqual(result.queries_or_steps, 1)


class PatchSideTest(unittest.TestCase):
    def test__patch_side__halves_every_fifth_of_the_budget(self) -> None:
        # Act / Assert
        self.assertEqual(patch_side(28, 1, 100), 9)
        self.assertEqual(patch_side(28, 20, 100), 4)
        self.assertEqual(patch_side(28, 40, 100), 2)
        self.assertEqual(patch_side(28, 99, 100), 1)
