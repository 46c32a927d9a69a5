"""Focal loss over predicted skill distributions."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from goskill.compute import Tensor
from goskill.compute.tensor import clamp_min, getitem
from goskill.errors import ConfigError, TargetIndexError

LOGGER = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(slots=True)
class FocalResult:
    loss: Tensor
    clamped: int = 0


def focal_loss(
    probs: Tensor,
    target: int | np.ndarray,
    gamma: float,
    mask: Optional[np.ndarray] = None,
) -> FocalResult:
    """``-(1 - p)^gamma * log p`` for the target probability ``p``.

    ``probs`` is [M] (with an int target) or [..., M] with integer targets of
    shape [...]. Masked entries contribute nothing; the rest are averaged.
    """
    if gamma < 0.0:
        raise ConfigError(f"focusing parameter must be >= 0, got {gamma}")
    classes = probs.shape[-1]
    targets = np.asarray(target, dtype=np.int64)
    if targets.shape != probs.shape[:-1]:
        raise TargetIndexError(f"targets {targets.shape} do not match distributions {probs.shape}")
    if np.any(targets < 0) or np.any(targets >= classes):
        raise TargetIndexError(f"target outside [0, {classes})")

    index = tuple(np.indices(targets.shape)) + (targets,)
    p = getitem(probs, index)
    clamped = int(np.count_nonzero(p.data < PROB_FLOOR))
    if clamped:
        LOGGER.warning("Focal loss clamped %d target probabilities to %.0e", clamped, PROB_FLOOR)
    p = clamp_min(p, PROB_FLOOR)
    per_item = -p.log()
    if gamma > 0.0:
        per_item = per_item * clamp_min(1.0 - p, PROB_FLOOR) ** gamma
    if per_item.ndim == 0:
        return FocalResult(per_item, clamped)
    if mask is None:
        return FocalResult(per_item.mean(), clamped)
    weights = np.asarray(mask, dtype=np.float64)
    total = float(weights.sum())
    if total <= 0.0:
        return FocalResult((per_item * 0.0).sum(), clamped)
    return FocalResult((per_item * weights).sum() / total, clamped)


__all__ = ["PROB_FLOOR", "FocalResult", "focal_loss"]
