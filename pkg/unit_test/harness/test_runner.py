import unittest
from typing import List, Tuple

from dentlab.attacks.spec import AttackSpec
from dentlab.data.shapes import synth_shapes
from dentlab.defense.config import DefenseConfig, Smoothing
from dentlab.harness.runner import (
    loss_variants,
    norm_affine_variants,
    run_scenario,
    run_scenarios,
    smoothing_variants,
)
from dentlab.harness.scenario import InvalidScenarioException, Scenario, ScenarioKind
from dentlab.nn.layers import StatsMode
from dentlab.nn.models import build_model


class VariantsTest(unittest.TestCase):
    def test__norm_affine_variants__four_combinations_without_smoothing(self) -> None:
        # Act
        variants = norm_affine_variants(DefenseConfig.dent())

        # Assert
        self.assertEqual(len(variants), 4)
        self.assertTrue(all(config.smoothing == Smoothing.NONE for _, config in variants))
        first, config = variants[0]
        self.assertEqual(first, {"stats": "train-time", "affine": "off"})
        self.assertEqual(config.stats_mode, StatsMode.TRAIN_TIME)
        self.assertFalse(config.adapt_affine)

    def test__smoothing_variants__six_combinations(self) -> None:
        # Act
        variants = smoothing_variants(DefenseConfig.dent())

        # Assert
        self.assertEqual(len(variants), 6)
        self.assertEqual(len({tuple(sorted(v.items())) for v, _ in variants}), 6)

    def test__loss_variants__both_objectives(self) -> None:
        # Act / Assert
        self.assertEqual(
            [v["objective"] for v, _ in loss_variants(DefenseConfig.dent())], ["minent", "maxinf"]
        )


class RunScenarioTest(unittest.TestCase):
    def setUp(self) -> None:
        self.model = build_model("convnet-bn-small", 4, seed=0)
        self.data = synth_shapes(4, 4, seed=0)
        self.attacks = (AttackSpec(epsilon=0.1, alpha=0.05, steps=1, seed=1),)
        self.defense = DefenseConfig.dent(steps=1)

    def scenario(
        self, kind: ScenarioKind, name: str = "", sweep_values: Tuple[float, ...] = ()
    ) -> Scenario:
        return Scenario(
            kind, self.attacks, self.defense, batch_size=4, sweep_values=sweep_values, name=name
        )

    def test__run_scenario__deny_updates_rows(self) -> None:
        # Act
        result = run_scenario(self.model, self.scenario(ScenarioKind.STATIC_DENT), self.data)

        # Assert
        self.assertEqual(len(result.reports), 3)
        self.assertEqual(result.reports[1].scenario, "static-dent")

    def test__run_scenario__loss_ablation_rows(self) -> None:
        # Act
        result = run_scenario(self.model, self.scenario(ScenarioKind.LOSS_ABLATION), self.data)

        # Assert
        self.assertEqual([r.variant["objective"] for r in result.reports], ["minent", "maxinf"])

    def test__run_scenario__step_sweep_values(self) -> None:
        # Act
        result = run_scenario(
            self.model, self.scenario(ScenarioKind.STEP_SWEEP, sweep_values=(0.0, 2.0)), self.data
        )

        # Assert
        self.assertEqual([r.defense_steps for r in result.reports], [0, 2])

    def test__run_scenario__epsilon_sweep_needs_values(self) -> None:
        # Act / Assert
        with self.assertRaises(InvalidScenarioException):
            run_scenario(self.model, self.scenario(ScenarioKind.EPS_SWEEP), self.data)

    def test__run_scenario__profile(self) -> None:
        # Arrange
        scenario = Scenario(
            ScenarioKind.PROFILE, (), self.defense, batch_size=2, sweep_values=(0.0, 1.0)
        )

        # Act
        result = run_scenario(self.model, scenario, self.data)

        # Assert
        self.assertEqual(result.reports, [])
        self.assertEqual([row.steps for row in result.profile], [0, 1])

    def test__run_scenarios__progress(self) -> None:
        # Arrange
        updates: List[Tuple[float, str]] = []
        scenarios = [
            self.scenario(ScenarioKind.STATIC_STATIC),
            self.scenario(ScenarioKind.DENT_DENT, name="dent"),
        ]

        # Act
        results = run_scenarios(
            self.model, scenarios, self.data, progress=lambda f, m: updates.append((f, m))
        )

        # Assert
        self.assertEqual(len(results), 2)
        self.assertEqual(updates, [(0.5, "finished static-static"), (1.0, "finished dent")])
