"""Minibatch assembly and the policy training loop step."""
from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from goskill.compute import Adam, initialize, mse_loss
from goskill.config.settings import AblationConfig, NetworkConfig, OptimConfig, PolicyConfig
from goskill.errors import DataError

from .focal import focal_loss
from .network import PolicyBatch, SkillPolicy, policy_forward
from .preprocessing import PolicySequence, PolicyStore
from .prompts import PromptTriples

LOGGER = logging.getLogger(__name__)


def max_decisions(env_horizon: int, skill_horizon: int) -> int:
    return int(math.ceil(env_horizon / skill_horizon)) + 1


def build_policy(
    state_dim: int,
    latent_dim: int,
    num_skills: int,
    policy: PolicyConfig,
    network: NetworkConfig,
    ablation: AblationConfig,
    env_horizon: int,
    skill_horizon: int,
    seed: int,
) -> SkillPolicy:
    model = SkillPolicy(
        state_dim=state_dim,
        latent_dim=latent_dim,
        num_skills=num_skills,
        prompt_length=policy.prompt_length,
        max_decisions=max_decisions(env_horizon, skill_horizon),
        network=network,
        discrete=ablation.vq,
        return_scale=policy.return_scale,
    )
    initialize(model, seed + 1)
    model.transformer.seed_dropout(seed + 1)
    return model


def assemble_batch(
    windows: Sequence[Tuple[PolicySequence, int]],
    prompts: Sequence[PromptTriples],
    context_length: int,
) -> PolicyBatch:
    """Right-padded ``K``-point windows ``(sequence, start)`` with one prompt per row."""
    if not windows:
        raise DataError("cannot assemble an empty policy batch")
    b, k = len(windows), context_length
    first = windows[0][0]
    state_dim = first.states.shape[1]
    latent = first.embeddings.shape[1]
    rtg = np.zeros((b, k))
    states = np.zeros((b, k, state_dim))
    skills = np.zeros((b, k, latent))
    targets = np.zeros((b, k), dtype=np.int64)
    target_embeddings = np.zeros((b, k, latent))
    timesteps = np.zeros((b, k), dtype=np.int64)
    present = np.zeros((b, k), dtype=bool)
    valid = np.zeros((b, k), dtype=bool)
    for row, (seq, start) in enumerate(windows):
        stop = min(start + k, len(seq))
        n = stop - start
        rtg[row, :n] = seq.rtg[start:stop]
        states[row, :n] = seq.states[start:stop]
        targets[row, :n] = seq.targets[start:stop]
        target_embeddings[row, :n] = seq.embeddings[start:stop]
        # the skill token at T carries the skill executed at T; it is only visible to later points
        skills[row, :n] = seq.embeddings[start:stop]
        timesteps[row, :n] = np.arange(start, stop)
        present[row, :n] = True
        valid[row, :n] = seq.valid[start:stop]
    return PolicyBatch(
        prompt_rtg=np.stack([p.rtg for p in prompts]),
        prompt_states=np.stack([p.states for p in prompts]),
        prompt_skills=np.stack([p.embeddings for p in prompts]),
        prompt_mask=np.stack([p.mask for p in prompts]),
        rtg=rtg,
        states=states,
        skills=skills,
        timesteps=timesteps,
        present=present,
        targets=targets,
        target_embeddings=target_embeddings,
        valid=valid,
    )


def sample_policy_batch(
    store: PolicyStore,
    prompts: Dict[int, PromptTriples],
    batch_per_task: int,
    context_length: int,
    rng: np.random.Generator,
    tasks: Optional[Sequence[int]] = None,
) -> PolicyBatch:
    """``batch_per_task`` windows from each task, concatenated, each with its task prompt."""
    windows: List[Tuple[PolicySequence, int]] = []
    row_prompts: List[PromptTriples] = []
    for task_id in tasks if tasks is not None else store.tasks:
        candidates = store.for_task(task_id)
        if not candidates:
            continue
        for _ in range(batch_per_task):
            seq = candidates[rng.integers(len(candidates))]
            start = int(rng.integers(max(1, len(seq) - context_length + 1)))
            windows.append((seq, start))
            row_prompts.append(prompts[task_id])
    return assemble_batch(windows, row_prompts, context_length)


class PolicyTrainer:
    """Optimises the policy only; the skill model is never touched here."""

    def __init__(
        self,
        policy: SkillPolicy,
        config: Optional[PolicyConfig] = None,
        optim: Optional[OptimConfig] = None,
        ablation: Optional[AblationConfig] = None,
    ) -> None:
        config = config or PolicyConfig()
        optim = optim or OptimConfig()
        ablation = ablation or AblationConfig()
        self.policy = policy
        self.gamma = config.gamma if ablation.focal else 0.0
        self.optimizer = Adam(
            policy.parameters(),
            lr=optim.lr,
            betas=(optim.beta1, optim.beta2),
            eps=optim.eps,
            clip_norm=optim.clip_norm,
        )
        self.steps = 0
        self.clamped = 0

    def loss(self, batch: PolicyBatch):
        out = policy_forward(self.policy, batch)
        if not self.policy.discrete:
            return mse_loss(out, batch.target_embeddings, batch.loss_mask)
        result = focal_loss(out, batch.targets, self.gamma, batch.loss_mask)
        self.clamped += result.clamped
        return result.loss

    def policy_train_step(self, batch: PolicyBatch) -> float:
        self.policy.train()
        self.optimizer.zero_grad()
        loss = self.loss(batch)
        loss.backward()
        self.optimizer.step()
        self.steps += 1
        return loss.item()


def policy_train_step(trainer: PolicyTrainer, batch: PolicyBatch) -> float:
    return trainer.policy_train_step(batch)


__all__ = [
    "max_decisions",
    "build_policy",
    "assemble_batch",
    "sample_policy_batch",
    "PolicyTrainer",
    "policy_train_step",
]
