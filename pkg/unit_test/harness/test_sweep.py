import unittest

from dentlab.attacks.spec import AttackKind, AttackSpec
from dentlab.data.shapes import synth_shapes
from dentlab.defense.config import DefenseConfig
from dentlab.harness.scenario import InvalidScenarioException, Scenario, ScenarioKind
from dentlab.harness.sweep import SweepAxis, apply_axis, run_sweep
from dentlab.nn.models import build_model


class SweepTest(unittest.TestCase):
    def setUp(self) -> None:
        self.model = build_model("convnet-bn-small", 4, seed=0)
        self.data = synth_shapes(4, 4, seed=0)
        self.base = Scenario(
            ScenarioKind.DENT_DENT,
            (
                AttackSpec(epsilon=0.1, alpha=0.05, steps=1, seed=1),
                AttackSpec(kind=AttackKind.SQUARE, epsilon=0.1, query_budget=2),
            ),
            DefenseConfig.dent(steps=1),
            batch_size=4,
            name="steps",
        )

    def test__run_sweep__empty_values(self) -> None:
        # Act / Assert
        with self.assertRaises(InvalidScenarioException):
            run_sweep(self.model, SweepAxis.DEFENSE_STEPS, [], self.base, self.data)

    def test__run_sweep__unsorted_values(self) -> None:
        # Act / Assert
        with self.assertRaises(InvalidScenarioException):
            run_sweep(self.model, SweepAxis.BATCH_SIZE, [4, 2], self.base, self.data)

    def test__run_sweep__one_report_per_value(self) -> None:
        # Act
        reports = run_sweep(self.model, SweepAxis.DEFENSE_STEPS, [0, 1], self.base, self.data)

        # Assert
        self.assertEqual([report.defense_steps for report in reports], [0, 1])
        self.assertEqual([report.variant["value"] for report in reports], ["0", "1"])
        self.assertEqual(reports[0].seeds, reports[1].seeds)
        self.assertEqual(reports[0].flops_relative, 1.0)

    def test__apply_axis__epsilon_moves_every_member(self) -> None:
        # Act
        scenario = apply_axis(self.base, SweepAxis.EPSILON, 0.2)

        # Assert
        self.assertEqual([spec.epsilon for spec in scenario.attacks], [0.2, 0.2])

    def test__apply_axis__attack_steps_only_change_pgd(self) -> None:
        # Act
        scenario = apply_axis(self.base, SweepAxis.ATTACK_STEPS, 20)

        # Assert
        self.assertEqual(scenario.attacks[0].steps, 20)
        self.assertEqual(scenario.attacks[1], self.base.attacks[1])

    def test__apply_axis__batch_size(self) -> None:
        # Act / Assert
        self.assertEqual(apply_axis(self.base, SweepAxis.BATCH_SIZE, 2).batch_size, 2)

    def test__run_sweep__static_epsilon_grid_through_zero(self) -> None:
        # Arrange
        base = Scenario(
            ScenarioKind.DENT_DENT,
            (AttackSpec(epsilon=0.1, alpha=0.05, steps=1, seed=1),),
            DefenseConfig.static(),
            batch_size=4,
            name="eps",
        )

        # Act
        reports = run_sweep(self.model, SweepAxis.EPSILON, [0.0, 0.1], base, self.data)

        # Assert
        self.assertEqual([report.epsilon for report in reports], [0.0, 0.1])
        self.assertEqual(reports[0].adversarial_accuracy, reports[0].natural_accuracy)
