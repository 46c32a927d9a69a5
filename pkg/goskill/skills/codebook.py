"""Vector-quantised skill codebook."""
from __future__ import annotations

import logging
from typing import Tuple

import numpy as np

from goskill.compute import Module, Parameter, Tensor, straight_through
from goskill.compute.tensor import getitem
from goskill.errors import ConfigError, ShapeError

LOGGER = logging.getLogger(__name__)


class SkillCodebook(Module):
    """``M`` embedding rows plus usage bookkeeping (not part of the checkpoint)."""

    def __init__(self, size: int, latent_dim: int, commitment: float = 0.25) -> None:
        super().__init__()
        if commitment < 0.0:
            raise ConfigError(f"commitment weight must be >= 0, got {commitment}")
        self.size = size
        self.latent_dim = latent_dim
        self.commitment = commitment
        self.embeddings = Parameter((size, latent_dim))
        self.usage = np.zeros(size, dtype=np.int64)
        self.idle_steps = np.zeros(size, dtype=np.int64)

    # ------------------------------------------------------------------
    def nearest(self, z: np.ndarray) -> np.ndarray:
        """Index of the closest row for each vector in ``z`` [..., Z]; lowest index wins ties."""
        if self.size == 0:
            raise ConfigError("cannot quantize with an empty codebook")
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"latent width {z.shape[-1]} != codebook width {self.latent_dim}")
        flat = z.reshape(-1, self.latent_dim)
        dists = ((flat[:, None, :] - self.embeddings.data[None, :, :]) ** 2).sum(axis=-1)
        return np.argmin(dists, axis=1).reshape(z.shape[:-1])

    def quantize(self, z: Tensor, count: bool = True) -> Tuple[np.ndarray, Tensor]:
        """Return nearest indices and the selected rows (differentiable w.r.t. the codebook)."""
        indices = self.nearest(z.data)
        if count:
            self.usage += np.bincount(indices.reshape(-1), minlength=self.size)
        return indices, getitem(self.embeddings, indices)

    def lookup(self, indices: np.ndarray) -> np.ndarray:
        return self.embeddings.data[np.asarray(indices, dtype=np.int64)].copy()

    def reset_usage(self) -> None:
        self.usage[:] = 0
        self.idle_steps[:] = 0

    # ------------------------------------------------------------------
    def seed_from(self, samples: np.ndarray, rng: np.random.Generator) -> None:
        """k-means++ seeding from a batch of goal embeddings."""
        samples = np.asarray(samples, dtype=np.float64).reshape(-1, self.latent_dim)
        if len(samples) == 0:
            return
        chosen = [samples[rng.integers(len(samples))]]
        while len(chosen) < self.size:
            d2 = np.min(
                ((samples[:, None, :] - np.stack(chosen)[None, :, :]) ** 2).sum(axis=-1), axis=1
            )
            total = d2.sum()
            if total <= 0.0:
                chosen.append(samples[rng.integers(len(samples))])
            else:
                chosen.append(samples[rng.choice(len(samples), p=d2 / total)])
        self.embeddings.data = np.stack(chosen).astype(np.float64)

    def step_idle(self, indices: np.ndarray) -> None:
        used = np.zeros(self.size, dtype=bool)
        used[np.asarray(indices, dtype=np.int64).reshape(-1)] = True
        self.idle_steps = np.where(used, 0, self.idle_steps + 1)

    def dead_codes(self, patience: int) -> np.ndarray:
        return np.flatnonzero(self.idle_steps >= patience)

    def reseed_dead(self, samples: np.ndarray, rng: np.random.Generator, patience: int) -> int:
        """Move rows idle for ``patience`` steps onto random batch embeddings."""
        dead = self.dead_codes(patience)
        samples = np.asarray(samples, dtype=np.float64).reshape(-1, self.latent_dim)
        if dead.size == 0 or len(samples) == 0:
            return 0
        data = self.embeddings.data.copy()
        data[dead] = samples[rng.integers(len(samples), size=dead.size)]
        self.embeddings.data = data
        self.idle_steps[dead] = 0
        LOGGER.info("Re-seeded %d idle skill codes: %s", dead.size, dead.tolist())
        return int(dead.size)


def quantize(z: Tensor | np.ndarray, codebook: SkillCodebook) -> Tuple[np.ndarray, Tensor]:
    if not isinstance(z, Tensor):
        z = Tensor(z)
    return codebook.quantize(z)


def vq_loss(z: Tensor, selected: Tensor, commitment: float) -> Tensor:
    """``|sg[z] - e|^2 + alpha * |z - sg[e]|^2``, summed over the latent axis, batch mean."""
    if commitment < 0.0:
        raise ConfigError(f"commitment weight must be >= 0, got {commitment}")
    codebook_term = selected - z.detach()
    commit_term = z - selected.detach()
    per_row = (codebook_term * codebook_term).sum(axis=-1)
    if commitment > 0.0:
        per_row = per_row + (commit_term * commit_term).sum(axis=-1) * commitment
    return per_row.mean() if per_row.ndim else per_row


__all__ = ["SkillCodebook", "quantize", "vq_loss", "straight_through"]
