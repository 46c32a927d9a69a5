"""Lock-step episode execution shared by every agent."""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from goskill.compute import no_grad
from goskill.envs.point_nav import BatchState, PointNavSuite
from goskill.errors import NumericError

LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class Decision:
    step: int
    skill_index: int
    embedding: np.ndarray


@dataclass(slots=True)
class EpisodeLog:
    task_id: int
    seed: int
    states: List[np.ndarray] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    decisions: List[Decision] = field(default_factory=list)
    window_lengths: List[int] = field(default_factory=list)
    success: bool = False
    error: Optional[str] = None

    @property
    def total_return(self) -> float:
        return float(np.sum(self.rewards)) if self.rewards else 0.0

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def skill_indices(self) -> List[int]:
        return [d.skill_index for d in self.decisions]


class BaseAgent(ABC):
    """Acts for a batch of episodes of one task in lock-step."""

    name = "agent"

    def begin(self, task_id: int, batch: BatchState, logs: Sequence[EpisodeLog]) -> None:
        """Prepare per-episode state before the first step."""

    @abstractmethod
    def act(self, batch: BatchState, logs: Sequence[EpisodeLog]) -> np.ndarray:
        """Actions [B, A] for every row (finished rows are ignored)."""

    def observe(self, batch: BatchState, actions: np.ndarray, rewards: np.ndarray) -> None:
        """Called after each environment step with the post-step batch."""

    def eval(self) -> "BaseAgent":
        return self


def run_episodes(
    agent: BaseAgent,
    suite: PointNavSuite,
    task_id: int,
    seeds: Sequence[int],
    max_steps: Optional[int] = None,
) -> List[EpisodeLog]:
    max_steps = suite.horizon if max_steps is None else max_steps
    batch = suite.reset_batch([task_id] * len(seeds), seeds)
    logs = [EpisodeLog(task_id=task_id, seed=int(seed), states=[batch.observations[i].copy()]) for i, seed in enumerate(seeds)]
    agent.eval()
    with no_grad():
        agent.begin(task_id, batch, logs)
        step = 0
        while not np.all(batch.done) and step < max_steps:
            live = ~batch.done
            try:
                actions = np.asarray(agent.act(batch, logs), dtype=np.float64)
            except NumericError as exc:
                for i in np.flatnonzero(live):
                    logs[i].error = str(exc)
                LOGGER.error("Task %d: agent produced non-finite values at step %d: %s", task_id, step, exc)
                break
            bad = live & ~np.all(np.isfinite(actions), axis=1)
            for i in np.flatnonzero(bad):
                logs[i].error = f"non-finite action at step {step}"
                batch.done[i] = True
            actions = np.where(np.isfinite(actions), actions, 0.0)
            live = ~batch.done
            rewards = suite.step_batch(batch, actions)
            for i in np.flatnonzero(live):
                logs[i].actions.append(np.clip(actions[i], -1.0, 1.0))
                logs[i].rewards.append(float(rewards[i]))
                logs[i].states.append(batch.observations[i].copy())
            agent.observe(batch, actions, rewards)
            step += 1
    for i, log in enumerate(logs):
        log.success = bool(batch.success[i])
    return logs


__all__ = ["Decision", "EpisodeLog", "BaseAgent", "run_episodes"]
