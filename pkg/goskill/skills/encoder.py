"""Goal encoder: state differences (or action chunks) to latent goal vectors."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from goskill.compute import MLP, Module, Tensor
from goskill.errors import ShapeError


class GoalEncoder(Module):
    """MLP ``G`` with ``z = G(s_to - s_from)``.

    ``hidden=()`` gives a single linear map, which tests configure as an
    identity to check the zero-difference case.
    """

    def __init__(self, in_dim: int, latent_dim: int, hidden: Sequence[int] = (128,)) -> None:
        super().__init__()
        self.in_dim = in_dim
        self.latent_dim = latent_dim
        self.mlp = MLP((in_dim, *hidden, latent_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"goal encoder expects inputs of width {self.in_dim}, got {x.shape}")
        return self.mlp(x)


def encode_goal(encoder: GoalEncoder, s_from: np.ndarray, s_to: np.ndarray) -> Tensor:
    s_from = np.asarray(s_from, dtype=np.float64)
    s_to = np.asarray(s_to, dtype=np.float64)
    if s_from.shape != s_to.shape:
        raise ShapeError(f"encode_goal: state shapes differ, {s_from.shape} vs {s_to.shape}")
    return encoder(Tensor(s_to - s_from))


__all__ = ["GoalEncoder", "encode_goal"]
