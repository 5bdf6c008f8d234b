"""Threat-model scenarios and the reports they produce."""

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

from dentlab.attacks.spec import AttackSpec, check_same_ball
from dentlab.defense.config import DefenseConfig

ONE_OF_16 = "one-of-16"
"""Mix ratio placing a single adversarial input among 15 natural ones."""

MIX_RATIOS: Tuple[Union[float, str], ...] = (0.1, 0.25, 0.5, 0.75, 0.9, ONE_OF_16)
"""Mix ratios of the standard mixed-batch table."""


class DegenerateScenarioException(Exception):
    """Thrown when neither the attack nor the defense would do anything."""

    ...  # pragma: no cover


class InvalidScenarioException(Exception):
    """Thrown when a scenario is inconsistent, e.g. a mix ratio without adversarial samples."""

    ...  # pragma: no cover


class ScenarioKind(Enum):
    """What a scenario evaluates."""

    STATIC_STATIC = "static-static"
    STATIC_DENT = "static-dent"
    DENT_DENT = "dent-dent"
    MIXED_BATCH = "mixed-batch"
    BATCH_SWEEP = "batch-sweep"
    STEP_SWEEP = "step-sweep"
    NORM_AFFINE_ABLATION = "norm-affine-ablation"
    LOSS_ABLATION = "loss-ablation"
    EPS_SWEEP = "eps-sweep"
    PROFILE = "profile"
    SMOOTHING_ABLATION = "smoothing-ablation"
    ATTACK_STEP_SWEEP = "attack-step-sweep"


@dataclass(frozen=True)
class Scenario:
    """An attack, a defense and the way they meet."""

    kind: ScenarioKind
    attacks: Tuple[AttackSpec, ...]
    """Ensemble members; all share norm and radius."""
    defense: DefenseConfig
    batch_size: int = 128
    mix_ratio: Optional[Union[float, str]] = None
    """Mixed batches: fraction of adversarial samples, or 'one-of-16'."""
    sweep_values: Tuple[float, ...] = ()
    """Sweeps: axis values in ascending order. Profiles: defense step counts."""
    name: str = ""

    def __post_init__(self) -> None:
        """Check the scenario is consistent."""
        if self.batch_size < 1:
            raise InvalidScenarioException(f"batch_size must be >= 1, got {self.batch_size}")
        if self.kind != ScenarioKind.PROFILE:
            if not self.attacks:
                raise InvalidScenarioException(f"Scenario {self.label} needs at least one attack")
            check_same_ball(list(self.attacks))
        if self.kind == ScenarioKind.MIXED_BATCH:
            if self.mix_ratio is None:
                raise InvalidScenarioException("mixed-batch scenarios need a mix_ratio")
            if isinstance(self.mix_ratio, str):
                if self.mix_ratio != ONE_OF_16:
                    raise InvalidScenarioException(
                        f"mix_ratio '{self.mix_ratio}' is neither a fraction nor {ONE_OF_16}"
                    )
            elif not 0.0 < self.mix_ratio <= 1.0:
                raise InvalidScenarioException(f"mix_ratio must be in (0, 1], got {self.mix_ratio}")

    @property
    def label(self) -> str:
        """Name of the scenario, its kind when unnamed."""
        return self.name or self.kind.value

    def adversarial_count(self) -> int:
        """Adversarial samples per batch of a mixed-batch scenario."""
        if self.mix_ratio is None:
            return self.batch_size
        return adversarial_count(self.mix_ratio, self.batch_size)


def adversarial_count(mix_ratio: Union[float, str], batch_size: int) -> int:
    """Adversarial samples per batch: floor(ratio * batch_size), or batch_size // 16.

    :raises InvalidScenarioException: If the ratio yields no adversarial sample.
    """
    if mix_ratio == ONE_OF_16:
        count = batch_size // 16
    else:
        count = int(float(mix_ratio) * batch_size + 1e-9)
    if count < 1:
        raise InvalidScenarioException(
            f"mix_ratio {mix_ratio} gives no adversarial sample in a batch of {batch_size}"
        )
    return count


@dataclass
class SampleRecord:
    """Audit trail of one evaluated sample."""

    batch: int
    index: int
    """Position of the sample in the evaluated dataset."""
    label: int
    clean_prediction: int
    """Prediction of the evaluated defense on the clean batch."""
    static_clean_prediction: int
    adversarial_prediction: int
    """Prediction under the perturbation of the winning attack."""
    attacked: bool
    """False for the natural members of a mixed batch."""
    member_correct: List[bool]
    """Per attack whether the final prediction on its perturbation was right."""
    winner: int
    """First attack whose perturbation flipped the prediction, 0 when none did."""

    @property
    def robust(self) -> bool:
        """Correct under every attack."""
        return all(self.member_correct)


@dataclass
class SigmaPoint:
    """Smoothing width after one adaptation update."""

    batch: int
    phase: str
    """'natural' or 'adversarial'."""
    step: int
    sigma: float


@dataclass
class EvalReport:
    """Accuracies of one scenario row with the per-sample records they are computed from."""

    scenario: str
    kind: str
    attack: str
    norm: str
    epsilon: float
    attack_steps: int
    defense: str
    defense_steps: int
    batch_size: int
    natural_accuracy: float
    """Percent correct on clean data under the evaluated defense."""
    static_natural_accuracy: float
    """Percent correct on clean data without defense."""
    adversarial_accuracy: float
    """Worst case over the attacks, percent of attacked samples."""
    per_attack_accuracy: Dict[str, float]
    records: List[SampleRecord] = field(default_factory=list)
    wall_time: float = 0.0
    flops: int = 0
    """Analytic operation count of the defended predictions."""
    flops_relative: float = 1.0
    """flops relative to static predictions of the same batches."""
    seeds: Dict[str, int] = field(default_factory=dict)
    events: List[str] = field(default_factory=list)
    sigma_trajectories: List[SigmaPoint] = field(default_factory=list)
    variant: Dict[str, str] = field(default_factory=dict)
    """Ablation or sweep coordinates of this row."""
    natural_member_accuracy: Optional[float] = None
    """Mixed batches: percent correct on the natural members."""
    last_move_held: bool = True
    """Whether every defended prediction postdated the final attack move."""

    def check_invariants(self) -> None:
        """Assert worst-case dominance and consistency with the per-sample records."""
        for name, accuracy in self.per_attack_accuracy.items():
            if self.adversarial_accuracy > accuracy + 1e-9:
                raise AssertionError(
                    f"{self.scenario}: worst case {self.adversarial_accuracy} exceeds {name} "
                    f"{accuracy}"
                )
        attacked = [record for record in self.records if record.attacked]
        if attacked:
            robust = 100.0 * sum(record.robust for record in attacked) / len(attacked)
            if abs(robust - self.adversarial_accuracy) > 1e-6:
                raise AssertionError(
                    f"{self.scenario}: records give {robust}, report says "
                    f"{self.adversarial_accuracy}"
                )

    def to_json_dict(self) -> Dict[str, Any]:
        """Plain JSON-compatible dictionary."""
        return asdict(self)

    @classmethod
    def from_json_dict(cls, values: Dict[str, Any]) -> "EvalReport":
        """Inverse of `to_json_dict`."""
        values = dict(values)
        values["records"] = [SampleRecord(**record) for record in values.get("records", [])]
        values["sigma_trajectories"] = [
            SigmaPoint(**point) for point in values.get("sigma_trajectories", [])
        ]
        return cls(**values)


def accuracy(correct: List[bool]) -> float:
    """Percent of True values, 0 for an empty list."""
    return 100.0 * sum(correct) / len(correct) if correct else 0.0
