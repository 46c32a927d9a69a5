"""Adam with bias correction and global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from goskill.errors import ConfigError, NumericError, ShapeError

from .nn import Parameter


@dataclass(slots=True)
class AdamState:
    lr: float
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One Adam step; returns new parameter arrays and a new state."""
    if state.lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {state.lr}")
    beta1, beta2 = state.betas
    step = state.step + 1
    first: Dict[str, np.ndarray] = {}
    second: Dict[str, np.ndarray] = {}
    updated: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        if grad.shape != value.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, expected {value.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        m_prev = state.first_moment.get(name, np.zeros_like(value))
        v_prev = state.second_moment.get(name, np.zeros_like(value))
        m = beta1 * m_prev + (1.0 - beta1) * grad
        v = beta2 * v_prev + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        updated[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        first[name], second[name] = m, v
    return updated, replace(state, step=step, first_moment=first, second_moment=second)


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if not np.isfinite(total):
        bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
        raise NumericError(f"non-finite gradient for parameter '{bad[0] if bad else '?'}'")
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for name in grads:
            grads[name] = grads[name] * scale
    return total


class Adam:
    """Stateful wrapper that applies ``adam_update`` to named parameters."""

    def __init__(
        self,
        params: Mapping[str, Parameter],
        lr: float = 3e-4,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: Optional[float] = 1.0,
    ) -> None:
        self.params = dict(params)
        self.state = AdamState(lr=lr, betas=betas, eps=eps)
        self.clip_norm = clip_norm

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None

    def reset_moments(self, name: str, rows: np.ndarray) -> None:
        """Zero both moment estimates for ``rows`` of parameter ``name``."""
        rows = np.asarray(rows, dtype=np.int64)
        for moments in (self.state.first_moment, self.state.second_moment):
            if name in moments:
                values = moments[name].copy()
                values[rows] = 0.0
                moments[name] = values

    def step(self) -> float:
        grads = {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.params.items()
        }
        norm = clip_grad_norm(grads, self.clip_norm or 0.0)
        values = {name: p.data for name, p in self.params.items()}
        updated, self.state = adam_update(values, grads, self.state)
        for name, param in self.params.items():
            param.data = updated[name]
        return norm


__all__ = ["AdamState", "adam_update", "clip_grad_norm", "Adam"]
