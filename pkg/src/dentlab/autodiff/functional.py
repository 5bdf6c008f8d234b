"""Composite differentiable functions built from the primitive operations."""

import numpy as np

from dentlab.autodiff import ops
from dentlab.autodiff.tensor import ShapeMismatchException, Tensor

PROBABILITY_FLOOR = 1e-12
ROW_SUM_TOLERANCE = 1e-5


class InvalidProbabilitiesException(Exception):
    """Thrown when a row of a probability matrix is negative or does not sum to one."""

    def __init__(self, row: int, row_sum: float):
        """Create the exception.

        :param row: Index of the first offending row.
        :param row_sum: Sum of that row.
        """
        self.row = row
        self.row_sum = row_sum
        super().__init__(
            f"Row {row} is not a probability distribution: sums to {row_sum:.8f}, expected 1 "
            f"within {ROW_SUM_TOLERANCE}"
        )


def check_probabilities(probs: np.ndarray) -> None:
    """Validate that every row of `probs` is a probability distribution.

    :param probs: Array of shape (B, C).
    :raises InvalidProbabilitiesException: On the first invalid row.
    """
    row_sums = probs.sum(axis=1, dtype=np.float64)
    bad = np.flatnonzero(
        (np.abs(row_sums - 1.0) > ROW_SUM_TOLERANCE) | (probs < 0).any(axis=1)
    )
    if bad.size:
        raise InvalidProbabilitiesException(int(bad[0]), float(row_sums[bad[0]]))


def entropy(probs: Tensor) -> Tensor:
    """Shannon entropy of every row: H_b = -sum_c p_bc log p_bc, with 0 log 0 = 0.

    Probabilities are clamped to [1e-12, 1] inside the logarithm.

    :param probs: Tensor of shape (B, C) with rows summing to one.
    :return: Tensor of shape (B,).
    """
    if probs.ndim != 2:
        raise ShapeMismatchException("entropy", probs.shape, detail="expected (B, C)")
    check_probabilities(probs.data)
    log_p = ops.log(ops.clamp(probs, PROBABILITY_FLOOR, 1.0))
    return ops.neg(ops.sum(ops.mul(probs, log_p), axis=1))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-sample cross-entropy of logits against integer labels.

    :param logits: Tensor of shape (B, C).
    :param labels: Integer labels of shape (B,).
    :return: Tensor of shape (B,).
    """
    return ops.neg(ops.gather_rows(ops.log_softmax(logits, axis=1), labels))
