import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Optional

from dentlab.config_schema import ConfigException
from dentlab.nn.layers import Granularity, StatsMode


class Smoothing(Enum):
    """Input adaptation mode."""

    NONE = "none"
    STATIC = "static"
    """Gaussian smoothing with the initial width, never adapted."""
    DYNAMIC = "dynamic"
    """Gaussian smoothing whose width is adapted with the normalization parameters."""


class Objective(Enum):
    """Quantity the defense minimizes at test time."""

    MINENT = "minent"
    """Mean prediction entropy."""
    MAXINF = "maxinf"
    """Mean prediction entropy minus the weighted entropy of the batch-mean prediction."""


class FinalPassStats(Enum):
    """Statistics of the final prediction pass with test-time statistics."""

    TRAIN = "train"
    BATCH = "batch"


class Interleave(Enum):
    """When the defense adapts during an attack."""

    LOCKSTEP = "lockstep"
    """One adaptation round after every attack iterate."""
    SUBMISSION = "submission"
    """Only on submission; the attack optimizes against the reset state."""


@dataclass(frozen=True)
class DefenseConfig:
    """Test-time adaptation settings of the dent defense."""

    steps: int = 10
    """Adaptation updates per batch; 0 disables the defense entirely."""
    model_lr: float = 0.001
    """Adam learning rate of the normalization scales and shifts."""
    sigma_lr: float = 0.25
    """Adam learning rate of the smoothing width."""
    granularity: Granularity = Granularity.BATCH_WISE
    stats_mode: StatsMode = StatsMode.TEST_TIME
    adapt_affine: bool = True
    smoothing: Smoothing = Smoothing.DYNAMIC
    sigma_init: float = 0.7
    objective: Objective = Objective.MINENT
    maxinf_weight: float = 1.0
    """Weight of the marginal entropy term of the maxinf objective."""
    optimizer: str = "adam"
    reset: str = "per-batch"
    grad_clip: Optional[float] = None
    """Clip the global gradient norm of every update to this value."""
    final_pass_stats: FinalPassStats = FinalPassStats.BATCH
    interleave: Interleave = Interleave.LOCKSTEP
    carry_state: bool = False
    """Continue from the previous round within a batch instead of adapting from the reset
    state every round."""
    per_sample_sigma: bool = False
    """One smoothing width per sample instead of one per batch."""
    seed: int = 0

    def __post_init__(self) -> None:
        """Check the invariants; offending fields are reported as 'defense.<field>'."""
        if self.steps < 0:
            raise ConfigException("defense.steps", f"must be >= 0, got {self.steps}")
        for name in ("model_lr", "sigma_lr"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigException(f"defense.{name}", f"must be finite and >= 0, got {value}")
        if not math.isfinite(self.sigma_init) or self.sigma_init < 0:
            raise ConfigException("defense.sigma_init", f"must be >= 0, got {self.sigma_init}")
        if self.maxinf_weight < 0:
            raise ConfigException(
                "defense.maxinf_weight", f"must be >= 0, got {self.maxinf_weight}"
            )
        if self.optimizer != "adam":
            raise ConfigException("defense.optimizer", f"'{self.optimizer}' is not one of adam")
        if self.reset != "per-batch":
            raise ConfigException("defense.reset", f"'{self.reset}' is not one of per-batch")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigException("defense.grad_clip", f"must be > 0, got {self.grad_clip}")

    @property
    def adapt_sigma(self) -> bool:
        """Whether the smoothing width is adapted."""
        return self.smoothing == Smoothing.DYNAMIC

    @property
    def is_static(self) -> bool:
        """Zero steps: no smoothing, train-time statistics, the static model bit for bit."""
        return self.steps == 0

    @property
    def label(self) -> str:
        """Short display name."""
        if self.is_static:
            return "static"
        name = "dent+" if self.granularity == Granularity.SAMPLE_WISE else "dent"
        return f"{name}-{self.steps}"

    def with_overrides(self, **changes: Any) -> "DefenseConfig":
        """Validated copy with some fields replaced."""
        return replace(self, **changes)

    @classmethod
    def static(cls) -> "DefenseConfig":
        """The undefended model."""
        return cls(steps=0, smoothing=Smoothing.NONE, stats_mode=StatsMode.TRAIN_TIME)

    @classmethod
    def dent(cls, steps: int = 10, **changes: Any) -> "DefenseConfig":
        """Batch-wise entropy minimization with Adam at learning rate 0.001."""
        return replace(cls(steps=steps), **changes)

    @classmethod
    def dent_plus(cls, steps: int = 6, **changes: Any) -> "DefenseConfig":
        """Sample-wise adaptation with the maxinf objective and clipped Adam at 0.006."""
        base = cls(
            steps=steps,
            granularity=Granularity.SAMPLE_WISE,
            objective=Objective.MAXINF,
            model_lr=0.006,
            grad_clip=1.0,
        )
        return replace(base, **changes)
