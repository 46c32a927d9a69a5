"""Composite differentiable operations built from tensor primitives."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from goskill.errors import ConfigError, ShapeError, TargetIndexError

from .tensor import Tensor, as_tensor, dropout, getitem, log_softmax, matmul


@dataclass(slots=True)
class AttentionParams:
    qkv_weight: Tensor  # [D, 3D]
    qkv_bias: Tensor  # [3D]
    out_weight: Tensor  # [D, D]
    out_bias: Tensor  # [D]


def linear_forward(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``."""
    x = as_tensor(x)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if x.ndim == 1:
        out = matmul(x.reshape(1, -1), weight).reshape(weight.shape[1])
    else:
        out = matmul(x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias
    return out


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + offset


def causal_mask(length: int, key_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean attention mask, True where query ``i`` may read key ``j``.

    Keys after the query are always blocked; ``key_mask`` [B, T] blocks padded
    keys. A query can always read itself so no row is empty.
    """
    allowed = np.tril(np.ones((length, length), dtype=bool))
    if key_mask is None:
        return allowed[None, None]
    keys = np.asarray(key_mask, dtype=bool)[:, None, None, :]
    return (allowed[None, None] & keys) | np.eye(length, dtype=bool)[None, None]


def causal_self_attention(
    x: Tensor,
    params: AttentionParams,
    n_heads: int,
    key_mask: Optional[np.ndarray] = None,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tensor:
    """Multi-head self-attention where position ``t`` sees positions ``<= t``.

    ``x`` is [T, D] or [B, T, D]; the output has the same shape.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ShapeError(f"attention expects [T, D] or [B, T, D], got {x.shape}")
    batch, length, width = x.shape
    if n_heads < 1 or width % n_heads:
        raise ConfigError(f"model width {width} is not divisible by {n_heads} heads")
    head_dim = width // n_heads

    qkv = linear_forward(x, params.qkv_weight, params.qkv_bias)

    def split_heads(start: int) -> Tensor:
        part = getitem(qkv, (slice(None), slice(None), slice(start, start + width)))
        return part.reshape(batch, length, n_heads, head_dim).transpose(0, 2, 1, 3)

    q, k, v = split_heads(0), split_heads(width), split_heads(2 * width)
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(head_dim))
    weights = scores.softmax(axis=-1, mask=causal_mask(length, key_mask))
    if training and dropout_rate > 0.0 and rng is not None:
        weights = dropout(weights, dropout_rate, rng, training)
    mixed = matmul(weights, v).transpose(0, 2, 1, 3).reshape(batch, length, width)
    out = linear_forward(mixed, params.out_weight, params.out_bias)
    return out.reshape(length, width) if squeeze else out


def softmax_cross_entropy(logits: Tensor, target: int | np.ndarray, reduction: str = "mean") -> Tensor:
    """``-log softmax(logits)[target]`` with max-subtraction for stability."""
    logits = as_tensor(logits)
    classes = logits.shape[-1]
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if np.any(targets < 0) or np.any(targets >= classes):
        raise TargetIndexError(f"target {target} outside [0, {classes})")
    logp = log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        return -getitem(logp, int(targets[0]))
    picked = -getitem(logp, (np.arange(logits.shape[0]), targets))
    if reduction == "none":
        return picked
    return picked.mean()


def mse_loss(pred: Tensor, target: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Squared error summed over the last axis, averaged over valid positions.

    ``pred``/``target`` are [..., A]; ``mask`` is [...] with 1 for valid steps.
    """
    diff = pred - Tensor(target)
    per_step = (diff * diff).sum(axis=-1)
    if mask is None:
        return per_step.mean()
    weights = np.asarray(mask, dtype=np.float64)
    total = float(weights.sum())
    if total <= 0.0:
        return (per_step * 0.0).sum()
    return (per_step * weights).sum() / total


__all__ = [
    "AttentionParams",
    "linear_forward",
    "layer_norm",
    "causal_mask",
    "causal_self_attention",
    "softmax_cross_entropy",
    "mse_loss",
]
