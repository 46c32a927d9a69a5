"""Prompt-conditioned skill policy over (return-to-go, state, skill) tokens.

Sequence layout: ``K*`` prompt triples followed by ``K`` history triples,
each triple ordered ``r, s, z``. The skill for decision point ``T`` is
predicted from the ``s_T`` token, which sees ``z`` only for earlier points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from goskill.compute import CausalTransformer, Linear, Module, Parameter, Tensor, stack
from goskill.compute.tensor import concat, getitem
from goskill.config.settings import NetworkConfig
from goskill.errors import ContractError


@dataclass(slots=True)
class PolicyBatch:
    prompt_rtg: np.ndarray  # [B, K*]
    prompt_states: np.ndarray  # [B, K*, S]
    prompt_skills: np.ndarray  # [B, K*, Z]
    prompt_mask: np.ndarray  # [B, K*]
    rtg: np.ndarray  # [B, K]
    states: np.ndarray  # [B, K, S]
    skills: np.ndarray  # [B, K, Z]
    timesteps: np.ndarray  # [B, K] absolute decision index
    present: np.ndarray  # [B, K] token exists (right padding is False)
    targets: np.ndarray  # [B, K]
    target_embeddings: np.ndarray  # [B, K, Z]
    valid: np.ndarray  # [B, K] contributes to the loss

    def __len__(self) -> int:
        return int(self.rtg.shape[0])

    @property
    def loss_mask(self) -> np.ndarray:
        return self.present & self.valid


class SkillPolicy(Module):
    def __init__(
        self,
        state_dim: int,
        latent_dim: int,
        num_skills: int,
        prompt_length: int,
        max_decisions: int,
        network: Optional[NetworkConfig] = None,
        discrete: bool = True,
        return_scale: float = 0.01,
    ) -> None:
        super().__init__()
        network = network or NetworkConfig()
        width = network.width
        self.state_dim = state_dim
        self.latent_dim = latent_dim
        self.num_skills = num_skills
        self.prompt_length = prompt_length
        self.max_decisions = max_decisions
        self.discrete = discrete
        self.return_scale = return_scale
        self.embed_rtg = Linear(1, width)
        self.embed_state = Linear(state_dim, width)
        self.embed_skill = Linear(latent_dim, width)
        self.prompt_position = Parameter((prompt_length, width))
        self.timestep = Parameter((max_decisions, width))
        self.transformer = CausalTransformer(width, network.n_layers, network.n_heads, network.dropout)
        self.head = Linear(width, num_skills if discrete else latent_dim)

    def _triples(self, rtg: np.ndarray, states: np.ndarray, skills: np.ndarray, position: Tensor) -> Tensor:
        batch, length = rtg.shape
        tokens = stack(
            [
                self.embed_rtg(Tensor(rtg[..., None] * self.return_scale)),
                self.embed_state(Tensor(states)),
                self.embed_skill(Tensor(skills)),
            ],
            axis=2,
        )
        tokens = tokens + position.reshape(batch, length, 1, -1)
        return tokens.reshape(batch, 3 * length, -1)

    def _check(self, batch: PolicyBatch) -> None:
        b, k = batch.rtg.shape
        kp = batch.prompt_rtg.shape[1]
        expected = {
            "prompt_states": (b, kp, self.state_dim),
            "prompt_skills": (b, kp, self.latent_dim),
            "prompt_mask": (b, kp),
            "states": (b, k, self.state_dim),
            "skills": (b, k, self.latent_dim),
            "timesteps": (b, k),
            "present": (b, k),
        }
        for name, shape in expected.items():
            actual = getattr(batch, name).shape
            if actual != shape:
                raise ContractError(f"policy tokens misaligned: {name} has shape {actual}, expected {shape}")
        if kp > self.prompt_length:
            raise ContractError(f"prompt of {kp} triples exceeds configured length {self.prompt_length}")
        if k < 1:
            raise ContractError("policy history must contain at least one decision point")

    def __call__(self, batch: PolicyBatch) -> Tensor:
        """Raw head outputs at every history state token: [B, K, M] (or [B, K, Z])."""
        self._check(batch)
        b, k = batch.rtg.shape
        kp = batch.prompt_rtg.shape[1]
        prompt_pos = getitem(self.prompt_position, np.broadcast_to(np.arange(kp), (b, kp)))
        steps = np.clip(np.asarray(batch.timesteps, dtype=np.int64), 0, self.max_decisions - 1)
        history_pos = getitem(self.timestep, steps)
        prompt = self._triples(batch.prompt_rtg, batch.prompt_states, batch.prompt_skills, prompt_pos)
        history = self._triples(batch.rtg, batch.states, batch.skills, history_pos)
        sequence = concat([prompt, history], axis=1)
        key_mask = np.concatenate(
            [np.repeat(batch.prompt_mask, 3, axis=1), np.repeat(batch.present, 3, axis=1)], axis=1
        )
        hidden = self.transformer(sequence, key_mask)
        state_slots = 3 * kp + 3 * np.arange(k) + 1
        return self.head(getitem(hidden, (slice(None), state_slots)))


def policy_forward(policy: SkillPolicy, batch: PolicyBatch) -> Tensor:
    """Per-decision-point skill distributions [B, K, M]; regressed embeddings when continuous."""
    out = policy(batch)
    return out.softmax(axis=-1) if policy.discrete else out


__all__ = ["PolicyBatch", "SkillPolicy", "policy_forward"]
