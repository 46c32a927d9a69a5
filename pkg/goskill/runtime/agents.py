"""Agents: the hierarchical skill agent and scripted reference agents."""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np

from goskill.compute import Tensor
from goskill.envs.controllers import build_controller
from goskill.envs.point_nav import BatchState, PointNavSuite
from goskill.policy.network import PolicyBatch, SkillPolicy, policy_forward
from goskill.policy.preprocessing import PolicyStore
from goskill.policy.prompts import PromptTriples, select_prompt
from goskill.skills.model import SkillModel

from .rollout import BaseAgent, Decision, EpisodeLog, run_episodes


class GoSkillAgent(BaseAgent):
    """Policy picks a skill every ``H`` steps; the decoder acts inside the window."""

    name = "goskill"

    def __init__(
        self,
        skill_model: SkillModel,
        policy: SkillPolicy,
        prompts: PolicyStore,
        context_length: int = 20,
        prompt_length: int = 10,
        seed: int = 0,
    ) -> None:
        self.skill_model = skill_model
        self.policy = policy
        self.prompts = prompts
        self.context_length = context_length
        self.prompt_length = prompt_length
        self.seed = seed
        self.horizon = skill_model.horizon

    def eval(self) -> "GoSkillAgent":
        self.skill_model.eval()
        self.policy.eval()
        return self

    def begin(self, task_id: int, batch: BatchState, logs: Sequence[EpisodeLog]) -> None:
        n = len(batch)
        self.prompt: PromptTriples = select_prompt(task_id, self.prompts, self.seed, self.prompt_length)
        self.rtg = np.full(n, self.prompt.max_return)
        self.t = 0
        self.history: List[tuple] = []
        self.embeddings = np.zeros((n, self.skill_model.latent_dim))
        self.window_states: List[np.ndarray] = []
        self.window_actions: List[np.ndarray] = []
        self.origin = batch.observations.copy()

    def _select(self, batch: BatchState, logs: Sequence[EpisodeLog]) -> None:
        n = len(batch)
        self.history.append((self.rtg.copy(), batch.observations.copy(), np.zeros_like(self.embeddings), self.t // self.horizon))
        window = self.history[-self.context_length :]
        k = len(window)
        policy_batch = PolicyBatch(
            prompt_rtg=np.broadcast_to(self.prompt.rtg, (n, self.prompt_length)).copy(),
            prompt_states=np.broadcast_to(self.prompt.states, (n, *self.prompt.states.shape)).copy(),
            prompt_skills=np.broadcast_to(self.prompt.embeddings, (n, *self.prompt.embeddings.shape)).copy(),
            prompt_mask=np.broadcast_to(self.prompt.mask, (n, self.prompt_length)).copy(),
            rtg=np.stack([rec[0] for rec in window], axis=1),
            states=np.stack([rec[1] for rec in window], axis=1),
            skills=np.stack([rec[2] for rec in window], axis=1),
            timesteps=np.tile(np.array([rec[3] for rec in window], dtype=np.int64), (n, 1)),
            present=np.ones((n, k), dtype=bool),
            targets=np.zeros((n, k), dtype=np.int64),
            target_embeddings=np.zeros((n, k, self.skill_model.latent_dim)),
            valid=np.ones((n, k), dtype=bool),
        )
        out = policy_forward(self.policy, policy_batch).data[:, -1]
        codebook = self.skill_model.codebook
        if self.policy.discrete:
            indices = np.argmax(out, axis=1)
            self.embeddings = codebook.lookup(indices)
        else:
            indices = codebook.nearest(out)
            self.embeddings = out.copy()
        # the executed skill becomes visible to later decision points
        self.history[-1] = (*self.history[-1][:2], self.embeddings.copy(), self.history[-1][3])
        for i in np.flatnonzero(~batch.done):
            logs[i].decisions.append(Decision(self.t, int(indices[i]), self.embeddings[i].copy()))
            logs[i].window_lengths.append(0)
        self.origin = batch.observations.copy()
        self.window_states = [batch.observations.copy()]
        self.window_actions = []

    def act(self, batch: BatchState, logs: Sequence[EpisodeLog]) -> np.ndarray:
        if self.t % self.horizon == 0:
            self._select(batch, logs)
        states = np.stack(self.window_states, axis=1)
        actions = (
            np.stack(self.window_actions, axis=1)
            if self.window_actions
            else np.zeros((len(batch), 0, self.skill_model.action_dim))
        )
        reached = self.skill_model.reached_goals(states, self.origin)
        predicted = self.skill_model.decoder(Tensor(self.embeddings), states, reached, actions)
        for i in np.flatnonzero(~batch.done):
            logs[i].window_lengths[-1] += 1
        return predicted.data[:, -1]

    def observe(self, batch: BatchState, actions: np.ndarray, rewards: np.ndarray) -> None:
        self.rtg = self.rtg - rewards
        self.window_actions.append(np.clip(actions, -1.0, 1.0))
        self.window_states.append(batch.observations.copy())
        self.t += 1


class ScriptedAgent(BaseAgent):
    """Wraps a scripted controller (expert, medium or random)."""

    def __init__(self, quality: str, suite: PointNavSuite) -> None:
        self.controller = build_controller(quality, suite)
        self.name = quality

    def begin(self, task_id: int, batch: BatchState, logs: Sequence[EpisodeLog]) -> None:
        self.rngs = [np.random.default_rng([log.seed, 1]) for log in logs]

    def act(self, batch: BatchState, logs: Sequence[EpisodeLog]) -> np.ndarray:
        return np.stack([self.controller.act(batch.row(i), self.rngs[i]) for i in range(len(batch))])


def hierarchical_rollout(
    task_id: int,
    policy: SkillPolicy,
    skill_model: SkillModel,
    prompts: PolicyStore,
    seed: int,
    max_steps: Optional[int] = None,
    suite: Optional[PointNavSuite] = None,
    context_length: int = 20,
    prompt_length: int = 10,
) -> EpisodeLog:
    """One episode of skill selection every ``H`` steps with decoder actions in between."""
    agent = GoSkillAgent(skill_model, policy, prompts, context_length, prompt_length, seed=seed)
    return run_episodes(agent, suite or PointNavSuite(), task_id, [seed], max_steps)[0]


__all__ = ["GoSkillAgent", "ScriptedAgent", "hierarchical_rollout"]
