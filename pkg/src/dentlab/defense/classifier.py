"""The dent defense as seen by an attacker, with the bookkeeping of who moved when."""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from typing_extensions import override

from dentlab.attacks.classifier import ModelUnderAttack, ObjectiveAndGradient
from dentlab.attacks.spec import AttackSpec
from dentlab.autodiff.tensor import Tensor
from dentlab.defense.config import Interleave
from dentlab.defense.dent import DentDefense


@dataclass
class GradientEvent:
    """A gradient handed to the attacker."""

    clock: int
    """Ledger time of the request."""
    attack_step: int
    """One-based index of the request within the current chain."""
    state_label: int
    """Index of the attack iterate the defense state was last adapted to, -1 for the reset
    state."""


@dataclass
class InterleaveLedger:
    """Logical clock of attack and defense moves on one batch."""

    clock: int = 0
    submissions: int = 0
    """Iterates submitted in the current chain."""
    chain_steps: int = 0
    """Gradients requested in the current chain."""
    gradient_events: List[GradientEvent] = field(default_factory=list)
    round_clocks: List[int] = field(default_factory=list)
    """Ledger time of every adaptation round."""
    final_clock: Optional[int] = None
    """Ledger time of the state used for the final prediction."""

    def tick(self) -> int:
        """Advance the clock and return the new time."""
        self.clock += 1
        return self.clock

    def begin_chain(self) -> None:
        """Start counting the iterates of a new attack chain."""
        self.submissions = 0
        self.chain_steps = 0

    def record_gradient(self) -> GradientEvent:
        """Log a gradient request against the current defense state."""
        self.chain_steps += 1
        event = GradientEvent(self.tick(), self.chain_steps, self.submissions - 1)
        self.gradient_events.append(event)
        return event

    def last_move_holds(self) -> bool:
        """Whether the final prediction postdates every attack move."""
        if self.final_clock is None:
            return False
        attack_clocks = [event.clock for event in self.gradient_events]
        return all(clock < self.final_clock for clock in attack_clocks + self.round_clocks)

    def stale_gradients_hold(self) -> bool:
        """Whether the gradient of step t was computed against the state of iterate t - 1."""
        return all(event.state_label == event.attack_step - 1 for event in self.gradient_events)


class DynamicClassifier(ModelUnderAttack):
    """White-box access to the dent-defended model.

    In lockstep mode every submitted iterate triggers an adaptation round, so the gradient of
    the next step is computed against the state adapted to the previous iterate. In
    submission mode the attack only ever sees the reset state. Queries always run a round on
    the queried input first, as the deployed defense would.
    """

    def __init__(self, defense: DentDefense):
        """Wrap a defense.

        :param defense: The defense, owning its private model copy.
        """
        self.defense = defense
        self.num_classes = defense.num_classes
        self.ledger = InterleaveLedger()

    @override
    def forward(self, x: Tensor) -> Tensor:
        """Logits under the current defense state."""
        return self.defense.forward(x)

    @override
    def begin_batch(self, x: np.ndarray) -> None:
        """Reset the defense for a new chain on x."""
        self.defense.reset()
        self.defense.begin_batch(x.shape[0])
        self.ledger.begin_chain()

    def _adapt(self, x: np.ndarray) -> None:
        self.defense.adapt_round(x)
        self.ledger.round_clocks.append(self.ledger.tick())

    @override
    def submit(self, x_adv: np.ndarray) -> None:
        """Adapt to the iterate in lockstep mode."""
        self.ledger.submissions += 1
        if self.defense.config.interleave == Interleave.LOCKSTEP:
            self._adapt(x_adv)

    @override
    def objective_and_gradient(
        self, x: np.ndarray, labels: np.ndarray, spec: AttackSpec, targets: Optional[np.ndarray]
    ) -> ObjectiveAndGradient:
        """Input gradient against the current, one move old, defense state."""
        self.ledger.record_gradient()
        return super().objective_and_gradient(x, labels, spec, targets)

    @override
    def query(self, x: np.ndarray) -> np.ndarray:
        """Adapt to x, then answer with the prediction pass the final scoring uses."""
        self.ledger.submissions += 1
        self._adapt(x)
        return self.defense.predict(x)

    def final_prediction(self, x: np.ndarray) -> np.ndarray:
        """The last move: adapt to the submitted batch and predict it.

        :return: Logits of shape (B, num_classes).
        """
        self._adapt(x)
        self.ledger.final_clock = self.ledger.tick()
        return self.defense.predict(x)

    def audit(self) -> Tuple[bool, bool]:
        """(last move holds, stale gradients hold) for the moves so far."""
        return self.ledger.last_move_holds(), self.ledger.stale_gradients_hold()
