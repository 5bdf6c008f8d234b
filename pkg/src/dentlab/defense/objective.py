from dentlab.autodiff import ops
from dentlab.autodiff.functional import entropy
from dentlab.autodiff.tensor import Tensor
from dentlab.defense.config import Objective


class InvalidObjectiveInputException(Exception):
    """Thrown when the defense objective is evaluated on an empty batch."""

    ...  # pragma: no cover


def defense_objective(probs: Tensor, objective: Objective, maxinf_weight: float = 1.0) -> Tensor:
    """Scalar objective the defense minimizes.

    minent is the mean entropy of the predictions. maxinf additionally subtracts the entropy of
    the batch-mean prediction, so confident predictions spread over the classes score best.

    :param probs: Softmax outputs of shape (B, C), B >= 1.
    :param objective: minent or maxinf.
    :param maxinf_weight: Weight of the marginal entropy term.
    :return: Scalar tensor.
    """
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InvalidObjectiveInputException(
            f"The defense objective needs a (B, C) batch with B >= 1, got shape {probs.shape}"
        )
    mean_entropy = ops.mean(entropy(probs))
    if objective == Objective.MINENT:
        return mean_entropy
    marginal = ops.mean(probs, axis=0, keepdims=True)
    weight = Tensor(maxinf_weight)
    return ops.sub(mean_entropy, ops.mul(weight, ops.sum(entropy(marginal))))
