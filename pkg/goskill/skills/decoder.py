"""Skill decoder: a causal transformer prompted with the skill embedding.

Token layout for a window of ``L <= H`` steps::

    [e] s_0 g_0 a_0 s_1 g_1 a_1 ... s_{L-1} g_{L-1} a_{L-1}

``g_t`` is the reached-goal embedding of step ``t``. The action for step
``t`` is read from the ``g_t`` token, so it sees ``e``, states and
reached-goals up to ``t`` and actions strictly before ``t``.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from goskill.compute import CausalTransformer, Linear, Module, Parameter, Tensor, stack
from goskill.compute.tensor import concat, getitem
from goskill.config.settings import NetworkConfig
from goskill.errors import ContractError


class SkillDecoder(Module):
    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        latent_dim: int,
        horizon: int,
        network: Optional[NetworkConfig] = None,
    ) -> None:
        super().__init__()
        network = network or NetworkConfig()
        width = network.width
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.latent_dim = latent_dim
        self.horizon = horizon
        self.embed_prompt = Linear(latent_dim, width)
        self.embed_state = Linear(state_dim, width)
        self.embed_goal = Linear(latent_dim, width)
        self.embed_action = Linear(action_dim, width)
        self.position = Parameter((1 + 3 * horizon, width))
        self.transformer = CausalTransformer(width, network.n_layers, network.n_heads, network.dropout)
        self.head = Linear(width, action_dim)

    def __call__(
        self,
        skill: Tensor,
        states: np.ndarray,
        reached_goals: Tensor,
        actions: np.ndarray,
    ) -> Tensor:
        """Predict one action per state token.

        ``skill`` [B, Z], ``states`` [B, L, S], ``reached_goals`` [B, L, Z],
        ``actions`` [B, L, A] or [B, L-1, A]; returns [B, L, A] in [-1, 1].
        """
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        if states.ndim != 3:
            raise ContractError(f"decoder states must be [B, L, S], got {states.shape}")
        batch, length, _ = states.shape
        if length < 1 or length > self.horizon:
            raise ContractError(f"decoder history of {length} steps exceeds skill horizon {self.horizon}")
        if reached_goals.shape != (batch, length, self.latent_dim):
            raise ContractError(
                f"reached goals {reached_goals.shape} do not match states {states.shape}"
            )
        if actions.shape[:1] != (batch,) or actions.shape[1] not in (length - 1, length):
            raise ContractError(f"actions {actions.shape} inconsistent with {length} states")
        if skill.shape != (batch, self.latent_dim):
            raise ContractError(f"skill prompt {skill.shape} != ({batch}, {self.latent_dim})")
        if actions.shape[1] < length:
            actions = np.concatenate([actions, np.zeros((batch, 1, self.action_dim))], axis=1)

        tokens = stack(
            [
                self.embed_state(Tensor(states)),
                self.embed_goal(reached_goals),
                self.embed_action(Tensor(actions)),
            ],
            axis=2,
        ).reshape(batch, 3 * length, -1)
        prompt = self.embed_prompt(skill).reshape(batch, 1, -1)
        sequence = concat([prompt, tokens], axis=1)
        sequence = sequence + getitem(self.position, slice(0, 1 + 3 * length))
        hidden = self.transformer(sequence)
        goal_slots = 2 + 3 * np.arange(length)
        return self.head(getitem(hidden, (slice(None), goal_slots))).tanh()


def decode_actions(
    decoder: SkillDecoder,
    skill: Tensor,
    states: np.ndarray,
    reached_goals: Tensor,
    actions: np.ndarray,
) -> Tensor:
    return decoder(skill, states, reached_goals, actions)


__all__ = ["SkillDecoder", "decode_actions"]
