import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np


class InvalidAttackSpecException(Exception):
    """Thrown when an attack specification violates its invariants."""

    def __init__(self, field_name: str, message: str):
        """Create the exception.

        :param field_name: Name of the offending AttackSpec field.
        :param message: What is wrong with it.
        """
        self.field_name = field_name
        super().__init__(f"Invalid attack spec field '{field_name}': {message}")


class AttackBudgetException(Exception):
    """Thrown when a black-box attack is given fewer than one query."""

    ...  # pragma: no cover


class Norm(Enum):
    """Threat model norm."""

    LINF = "linf"
    L2 = "l2"


class AttackLoss(Enum):
    """Quantity the attack optimizes."""

    CROSS_ENTROPY = "cross-entropy"
    DLR = "dlr"
    MARGIN = "margin"


class AttackKind(Enum):
    """Attack algorithm."""

    PGD = "pgd"
    SQUARE = "square"


@dataclass(frozen=True)
class AttackSpec:
    """A fully specified attack inside an l_p ball of radius epsilon."""

    norm: Norm = Norm.LINF
    """Threat model norm."""
    epsilon: float = 0.1
    """Radius of the ball; 0 gives the empty perturbation."""
    alpha: float = 0.01
    """Step size of gradient attacks."""
    steps: int = 40
    """Iterations per restart of gradient attacks."""
    restarts: int = 1
    """Independent chains of gradient attacks, the per-sample worst case is kept."""
    loss: AttackLoss = AttackLoss.CROSS_ENTROPY
    """Quantity to optimize."""
    targeted: bool = False
    """Aim at the runner-up class of the clean prediction instead of any wrong class."""
    seed: int = 0
    """Seed of the random initialization and restarts."""
    kind: AttackKind = AttackKind.PGD
    """Attack algorithm."""
    query_budget: int = 1000
    """Queries per batch of black-box attacks, the initialization query included."""
    random_start: bool = True
    """Start gradient chains at a uniform random point of the ball instead of zero."""
    momentum: float = 0.75
    """Weight of the new gradient step in the momentum update; 1.0 disables momentum."""
    name: str = field(default="", compare=False)
    """Optional display name, derived from kind and loss when empty."""

    def __post_init__(self) -> None:
        """Check the invariants of every field."""
        if not math.isfinite(self.epsilon) or self.epsilon < 0:
            raise InvalidAttackSpecException("epsilon", f"must be finite and >= 0: {self.epsilon}")
        if not math.isfinite(self.alpha) or self.alpha <= 0:
            raise InvalidAttackSpecException("alpha", f"must be finite and > 0: {self.alpha}")
        if self.steps < 1:
            raise InvalidAttackSpecException("steps", f"must be >= 1: {self.steps}")
        if self.restarts < 1:
            raise InvalidAttackSpecException("restarts", f"must be >= 1: {self.restarts}")
        if not 0.0 < self.momentum <= 1.0:
            raise InvalidAttackSpecException("momentum", f"must be in (0, 1]: {self.momentum}")

    @property
    def iterations(self) -> int:
        """Gradient steps per restart, or the query budget of the square attack."""
        return self.query_budget if self.kind == AttackKind.SQUARE else self.steps

    @property
    def label(self) -> str:
        """Display name of the attack."""
        if self.name:
            return self.name
        if self.kind == AttackKind.SQUARE:
            return "square"
        suffix = "-targeted" if self.targeted else ""
        return f"pgd-{self.loss.value}{suffix}"

    def with_epsilon(self, epsilon: float) -> "AttackSpec":
        """Copy with another radius and the step size scaled along."""
        if self.epsilon > 0:
            alpha = self.alpha * epsilon / self.epsilon if epsilon > 0 else self.alpha
        else:
            alpha = self.alpha
        return replace(self, epsilon=epsilon, alpha=alpha)

    @classmethod
    def training_recipe(cls, norm: Norm, epsilon: float, seed: int = 0) -> "AttackSpec":
        """PGD-10 inner maximization of adversarial training.

        The step size is epsilon / 4 for l_inf and epsilon / 5 for l_2.
        """
        alpha = epsilon / 4 if norm == Norm.LINF else epsilon / 5
        return cls(
            norm=norm,
            epsilon=epsilon,
            alpha=alpha if alpha > 0 else 1.0,
            steps=10,
            restarts=1,
            seed=seed,
            name="pgd-10-train",
        )


@dataclass
class AttackResult:
    """Outcome of attacking one batch."""

    delta: np.ndarray
    """Perturbation of shape (B, C, H, W), inside the ball and the pixel range."""
    success_mask: np.ndarray
    """Per sample whether the attack flipped the prediction (or hit the target)."""
    queries_or_steps: int
    """Gradient steps of gradient attacks, queries of black-box attacks."""
    per_sample_loss: np.ndarray
    """Best attack objective per sample, higher is stronger."""
    attack_name: str = ""
    """Label of the attack which produced the result."""
    accepted: Optional[np.ndarray] = None
    """Black-box attacks: accepted proposals per sample."""
    winner: Optional[np.ndarray] = None
    """Ensembles: index of the member whose perturbation is kept, per sample."""
    events: List[str] = field(default_factory=list)
    """Recorded incidents such as restarted chains."""
    members: List["AttackResult"] = field(default_factory=list)
    """Ensembles: the result of every member attack in order."""

    @property
    def batch_size(self) -> int:
        """Number of attacked samples."""
        return int(self.delta.shape[0])


def check_same_ball(specs: List[AttackSpec]) -> None:
    """Raise when the specs do not share norm and radius.

    :param specs: Member attacks of an ensemble, at least one.
    """
    if not specs:
        raise InvalidAttackSpecException("specs", "an ensemble needs at least one attack")
    first = specs[0]
    for spec in specs[1:]:
        if spec.norm != first.norm:
            raise InvalidAttackSpecException(
                "norm", f"ensemble members disagree: {first.norm.value} and {spec.norm.value}"
            )
        if spec.epsilon != first.epsilon:
            raise InvalidAttackSpecException(
                "epsilon", f"ensemble members disagree: {first.epsilon} and {spec.epsilon}"
            )
