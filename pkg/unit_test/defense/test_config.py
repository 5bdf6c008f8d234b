import unittest

from dentlab.config_schema import ConfigException
from dentlab.defense.config import DefenseConfig, Objective, Smoothing
from dentlab.nn.layers import Granularity, StatsMode


class DefenseConfigTest(unittest.TestCase):
    def test__init__defaults(self) -> None:
        # Act
        config = DefenseConfig()

        # Assert
        self.assertEqual(config.steps, 10)
        self.assertEqual(config.model_lr, 0.001)
        self.assertEqual(config.granularity, Granularity.BATCH_WISE)
        self.assertEqual(config.stats_mode, StatsMode.TEST_TIME)
        self.assertEqual(config.objective, Objective.MINENT)
        self.assertTrue(config.adapt_sigma)
        self.assertEqual(config.label, "dent-10")

    def test__init__negative_steps(self) -> None:
        # Act / Assert
        with self.assertRaises(ConfigException) as context:
            DefenseConfig(steps=-1)
        self.assertEqual(context.exception.field_path, "defense.steps")

    def test__init__non_finite_learning_rate(self) -> None:
        # Act / Assert
        with self.assertRaises(ConfigException) as context:
            DefenseConfig(sigma_lr=float("nan"))
        self.assertEqual(context.exception.field_path, "defense.sigma_lr")

    def test__init__unsupported_optimizer(self) -> None:
        # Act / Assert
        with self.assertRaises(ConfigException) as context:
            DefenseConfig(optimizer="sgd")
        self.assertEqual(context.exception.field_path, "defense.optimizer")

    def test__static__is_undefended(self) -> None:
        # Act
        config = DefenseConfig.static()

        # Assert
        self.assertTrue(config.is_static)
        self.assertEqual(config.smoothing, Smoothing.NONE)
        self.assertEqual(config.stats_mode, StatsMode.TRAIN_TIME)
        self.assertEqual(config.label, "static")

    def test__dent_plus__sample_wise_maxinf(self) -> None:
        # Act
        config = DefenseConfig.dent_plus()

        # Assert
        self.assertEqual(config.granularity, Granularity.SAMPLE_WISE)
        self.assertEqual(config.objective, Objective.MAXINF)
        self.assertEqual(config.grad_clip, 1.0)
        self.assertEqual(config.label, "dent+-6")

    def test__with_overrides__validates(self) -> None:
        # Act / Assert
        self.assertEqual(DefenseConfig().with_overrides(steps=3).steps, 3)
        with self.assertRaises(ConfigException):
            DefenseConfig().with_overrides(grad_clip=0.0)
