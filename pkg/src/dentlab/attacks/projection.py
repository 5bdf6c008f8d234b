from typing import Optional, Union

import numpy as np

from dentlab.attacks.spec import InvalidAttackSpecException, Norm

FEASIBILITY_TOLERANCE = 1e-6


def _as_norm(norm: Union[Norm, str]) -> Norm:
    return norm if isinstance(norm, Norm) else Norm(norm)


def per_sample_norm(delta: np.ndarray, norm: Union[Norm, str]) -> np.ndarray:
    """The l_inf or l_2 norm of every sample of a (B, ...) array."""
    flat = delta.reshape(delta.shape[0], -1).astype(np.float64)
    if _as_norm(norm) == Norm.LINF:
        return np.abs(flat).max(axis=1) if flat.shape[1] else np.zeros(flat.shape[0])
    return np.sqrt((flat * flat).sum(axis=1))


def project(
    delta: np.ndarray,
    norm: Union[Norm, str],
    epsilon: float,
    x: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Project perturbations onto the epsilon ball and, given x, into the pixel range.

    l_inf clamps every element to [-epsilon, epsilon]; l_2 rescales every sample by
    min(1, epsilon / ||delta_b||_2) and leaves zero-norm samples untouched. With x given, delta
    is then adjusted so x + delta lies in [0, 1], which only shrinks elements and so keeps the
    norm bound.

    :param delta: Perturbations of shape (B, ...).
    :param norm: 'linf' or 'l2'.
    :param epsilon: Radius of the ball, >= 0.
    :param x: Optional clean inputs of the same shape.
    :return: Projected perturbations in the dtype of delta.
    """
    if not np.isfinite(epsilon) or epsilon < 0:
        raise InvalidAttackSpecException("epsilon", f"must be finite and >= 0: {epsilon}")
    if epsilon == 0:
        return np.zeros_like(delta)
    if _as_norm(norm) == Norm.LINF:
        projected = np.clip(delta, -epsilon, epsilon)
    else:
        norms = per_sample_norm(delta, Norm.L2)
        safe = np.where(norms > 0, norms, 1.0)
        factor = np.minimum(1.0, epsilon / safe).reshape((-1,) + (1,) * (delta.ndim - 1))
        projected = delta * factor
    projected = projected.astype(delta.dtype, copy=False)
    if x is not None:
        projected = (np.clip(x + projected, 0.0, 1.0) - x).astype(delta.dtype, copy=False)
    return projected


def check_feasible(
    delta: np.ndarray, x: np.ndarray, norm: Union[Norm, str], epsilon: float
) -> np.ndarray:
    """Per sample whether delta respects the norm bound and keeps x + delta in [0, 1].

    :return: Boolean array of shape (B,).
    """
    inside_ball = per_sample_norm(delta, norm) <= epsilon + FEASIBILITY_TOLERANCE
    adv = (x.astype(np.float64) + delta).reshape(x.shape[0], -1)
    in_range = (adv >= -FEASIBILITY_TOLERANCE).all(axis=1) & (
        adv <= 1.0 + FEASIBILITY_TOLERANCE
    ).all(axis=1)
    return inside_ball & in_range
