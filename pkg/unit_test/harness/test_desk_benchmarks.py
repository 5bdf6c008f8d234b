import os
import unittest

import numpy as np
import pytest

from dentlab.attacks.spec import AttackSpec
from dentlab.data.dataset import Dataset, Split
from dentlab.data.shapes import synth_shapes
from dentlab.defense.config import DefenseConfig, Smoothing
from dentlab.defense.dent import DentDefense
from dentlab.harness.interleave import run_deny_updates, run_interleaved, run_static
from dentlab.nn.layers import StatsMode
from dentlab.nn.models import Model, build_model
from dentlab.nn.training import TrainSpec, train


def mean_entropy(logits: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    return float(-np.sum(probs * np.log(np.clip(probs, 1e-12, 1.0)), axis=1).mean())


@pytest.mark.slow
@unittest.skipUnless(os.environ.get("DENTLAB_RUN_SLOW") == "1", "desk benchmark")
class DeskBenchmarkTest(unittest.TestCase):
    model: Model
    test: Dataset
    attack: AttackSpec

    @classmethod
    def setUpClass(cls) -> None:
        cls.model = build_model("convnet-bn-small", 4, seed=0)
        train(cls.model, synth_shapes(1000, 4, seed=0), TrainSpec(epochs=5, batch_size=64))
        cls.test = synth_shapes(256, 4, seed=0, split=Split.TEST)
        cls.attack = AttackSpec(epsilon=0.1, alpha=0.025, steps=10, seed=1)

    def test__run_interleaved__dent_beats_static_under_attack(self) -> None:
        # Act
        static = run_static(self.model, self.attack, self.test)
        dent = run_interleaved(self.model, DefenseConfig.dent(steps=10), self.attack, self.test)

        # Assert
        self.assertGreaterEqual(dent.adversarial_accuracy, static.adversarial_accuracy + 3.0)
        self.assertGreaterEqual(dent.natural_accuracy, dent.static_natural_accuracy - 10.0)

    def test__run_interleaved__affine_only_no_worse_than_static(self) -> None:
        # Act
        static = run_static(self.model, self.attack, self.test)
        affine = run_interleaved(
            self.model,
            DefenseConfig.dent(steps=10, smoothing=Smoothing.NONE),
            self.attack,
            self.test,
        )

        # Assert
        self.assertGreaterEqual(affine.adversarial_accuracy, static.adversarial_accuracy)

    def test__run_interleaved__more_defense_steps_do_not_hurt(self) -> None:
        # Act
        one_step = run_interleaved(self.model, DefenseConfig.dent(steps=1), self.attack, self.test)
        ten_steps = run_interleaved(
            self.model, DefenseConfig.dent(steps=10), self.attack, self.test
        )

        # Assert
        self.assertGreaterEqual(ten_steps.adversarial_accuracy, one_step.adversarial_accuracy - 3.0)

    def test__run_deny_updates__offline_perturbations_transfer_poorly(self) -> None:
        # Act
        static_static, static_dent, _ = run_deny_updates(
            self.model, DefenseConfig.dent(steps=10), self.attack, self.test
        )

        # Assert
        self.assertGreaterEqual(
            static_dent.adversarial_accuracy, static_static.adversarial_accuracy + 5.0
        )

    def test__dent__natural_batches_lower_entropy(self) -> None:
        # Arrange
        config = DefenseConfig.dent(steps=10, smoothing=Smoothing.NONE)
        defense = DentDefense(self.model, config)
        unadapted = DentDefense(self.model, config.with_overrides(steps=1, model_lr=0.0))
        batches = [self.test.images[start : start + 12] for start in range(0, 240, 12)]

        # Act
        lowered = sum(mean_entropy(defense(x)) < mean_entropy(unadapted(x)) for x in batches)

        # Assert
        self.assertGreaterEqual(lowered, 16)

    def test__dent__natural_batches_do_not_widen_smoothing(self) -> None:
        # Arrange
        defense = DentDefense(self.model, DefenseConfig.dent(steps=10))
        widths = []

        # Act
        for start in range(0, 240, 12):
            defense(self.test.images[start : start + 12])
            assert defense.state.sigma is not None
            widths.append(float(np.mean(defense.state.sigma.sigma_values())))

        # Assert
        self.assertLessEqual(float(np.mean(widths)), 0.75)

    def test__dent__train_time_stats_ignore_batch_size(self) -> None:
        # Arrange
        config = DefenseConfig.dent(
            steps=1, smoothing=Smoothing.NONE, stats_mode=StatsMode.TRAIN_TIME
        )
        defense = DentDefense(self.model, config)
        accuracies = []

        # Act
        for batch_size in (1, 16, 128):
            predictions = np.concatenate(
                [
                    defense(self.test.images[start : start + batch_size]).argmax(axis=1)
                    for start in range(0, 128, batch_size)
                ]
            )
            accuracies.append(100.0 * float(np.mean(predictions == self.test.labels[:128])))

        # Assert
        self.assertLess(max(accuracies) - min(accuracies), 5.0)
