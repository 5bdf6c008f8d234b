import unittest

import numpy as np

from dentlab.defense.config import DefenseConfig, Smoothing
from dentlab.defense.dent import DefenseStateException, DentDefense, expand_samplewise
from dentlab.nn.layers import Granularity, StatsMode
from dentlab.nn.models import build_model, theta_checksum


def isolated_samplewise_config(steps: int) -> DefenseConfig:
    return DefenseConfig(
        steps=steps,
        granularity=Granularity.SAMPLE_WISE,
        stats_mode=StatsMode.TRAIN_TIME,
        smoothing=Smoothing.NONE,
        model_lr=0.01,
    )


class DentDefenseTest(unittest.TestCase):
    def setUp(self) -> None:
        self.model = build_model("convnet-bn-small", 4, seed=0)
        self.x = np.random.default_rng(1).uniform(size=(4, 1, 28, 28)).astype(np.float32)

    def test__call__zero_steps_is_static_model(self) -> None:
        for config in (DefenseConfig.static(), DefenseConfig.dent(steps=0)):
            # Arrange
            defense = DentDefense(self.model, config)

            # Act
            logits = defense(self.x)

            # Assert
            np.testing.assert_array_equal(logits, self.model.predict(self.x))

    def test__call__never_writes_backbone(self) -> None:
        # Arrange
        before = theta_checksum(self.model, exclude_normalization=False)
        defense = DentDefense(self.model, DefenseConfig.dent(steps=3))

        # Act
        defense(self.x)

        # Assert
        self.assertEqual(theta_checksum(self.model, exclude_normalization=False), before)
        self.assertEqual(theta_checksum(defense.model), theta_checksum(self.model))
        self.assertEqual(defense.state.step_counter, 3)
        self.assertEqual(len(defense.state.sigma_trajectory), 3)

    def test__call__deterministic_across_batches(self) -> None:
        # Arrange
        defense = DentDefense(self.model, DefenseConfig.dent(steps=2))

        # Act
        first = defense(self.x)
        defense(self.x[::-1].copy())
        second = defense(self.x)

        # Assert
        np.testing.assert_array_equal(first, second)

    def test__call__adaptation_lowers_entropy(self) -> None:
        # Arrange
        config = DefenseConfig.dent(steps=5, model_lr=0.01, smoothing=Smoothing.NONE)
        defense = DentDefense(self.model, config)
        unadapted = DentDefense(self.model, config.with_overrides(steps=1, model_lr=0.0))

        def mean_entropy(logits: np.ndarray) -> float:
            shifted = logits - logits.max(axis=1, keepdims=True)
            probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
            return float(-np.sum(probs * np.log(np.clip(probs, 1e-12, 1.0)), axis=1).mean())

        # Act
        adapted_entropy = mean_entropy(defense(self.x))
        reference_entropy = mean_entropy(unadapted(self.x))

        # Assert
        self.assertLess(adapted_entropy, reference_entropy)

    def test__reset__is_idempotent(self) -> None:
        # Arrange
        defense = DentDefense(self.model, DefenseConfig.dent(steps=2))
        trained = [(bn.gamma.data.copy(), bn.beta.data.copy()) for bn in self.model.bn_states()]
        defense.adapt_batch(self.x)

        # Act
        defense.reset()
        defense.reset()

        # Assert
        for bn, (gamma, beta) in zip(defense.model.bn_states(), trained):
            np.testing.assert_array_equal(bn.gamma.data, gamma)
            np.testing.assert_array_equal(bn.beta.data, beta)
            self.assertIsNone(bn.batch_mu)
        assert defense.state.sigma is not None
        np.testing.assert_allclose(defense.state.sigma.sigma_values(), 0.7, rtol=1e-5)
        self.assertEqual(defense.state.step_counter, 0)
        self.assertIsNone(defense.state.optimizer)

    def test__adapt_batch__requires_reset(self) -> None:
        # Arrange
        defense = DentDefense(self.model, DefenseConfig.dent(steps=1))
        defense.adapt_batch(self.x)

        # Act / Assert
        with self.assertRaises(DefenseStateException):
            defense.adapt_batch(self.x)

    def test__adapt_round__restarts_from_reset_state(self) -> None:
        # Arrange
        defense = DentDefense(self.model, DefenseConfig.dent(steps=2))
        defense.reset()
        defense.begin_batch(4)

        # Act
        defense.adapt_round(self.x)
        first = defense.predict(self.x)
        defense.adapt_round(self.x)
        second = defense.predict(self.x)

        # Assert
        np.testing.assert_array_equal(first, second)
        self.assertEqual(defense.state.step_counter, 2)

    def test__adapt_round__carry_state_continues(self) -> None:
        # Arrange
        defense = DentDefense(self.model, DefenseConfig.dent(steps=2, carry_state=True))
        defense.reset()
        defense.begin_batch(4)

        # Act
        defense.adapt_round(self.x)
        defense.adapt_round(self.x)

        # Assert
        self.assertEqual(defense.state.step_counter, 4)
        self.assertEqual(defense.state.round_counter, 2)


class SampleWiseTest(unittest.TestCase):
    def setUp(self) -> None:
        self.model = build_model("convnet-bn-small", 4, seed=0)
        self.x = np.random.default_rng(2).uniform(size=(4, 1, 28, 28)).astype(np.float32)

    def test__expand_samplewise__predicts_like_original(self) -> None:
        # Act
        expanded = expand_samplewise(self.model, 4)

        # Assert
        self.assertEqual(expanded.bn_states()[0].gamma.shape[0], 4)
        np.testing.assert_allclose(
            expanded.predict(self.x), self.model.predict(self.x), rtol=1e-5, atol=1e-6
        )
        self.assertEqual(self.model.bn_states()[0].gamma.ndim, 1)

    def test__call__samples_adapt_in_isolation(self) -> None:
        # Arrange
        defense = DentDefense(self.model, isolated_samplewise_config(3))
        other = self.x.copy()
        other[1:] = np.random.default_rng(3).uniform(size=(3, 1, 28, 28))

        # Act
        first = defense(self.x)
        second = defense(other)

        # Assert
        np.testing.assert_allclose(first[0], second[0], rtol=1e-4, atol=1e-5)
        self.assertFalse(np.allclose(first[1:], second[1:]))

    def test__call__matches_single_sample_defense(self) -> None:
        # Arrange
        batch_defense = DentDefense(self.model, isolated_samplewise_config(3))
        single_defense = DentDefense(self.model, isolated_samplewise_config(3))

        # Act
        batched = batch_defense(self.x)
        single = single_defense(self.x[2:3])

        # Assert
        np.testing.assert_allclose(batched[2], single[0], rtol=1e-3, atol=1e-3)
