"""Deterministic multi-task 2D point-navigation suite.

All tasks share one 11-dimensional state and a 2D action in [-1, 1]:

    [0:2]  agent position      [2:4]  agent velocity
    [4:6]  point A             [6:8]  point B
    [8:10] object / button     [10]   latch (0 idle, 1 holding, -1 pressed)

A task is an ordered template of waypoint primitives. The episode stage
(index of the current waypoint) is bookkeeping kept next to the vector.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from goskill.config.settings import EnvConfig
from goskill.errors import ConfigError, NumericError

STATE_DIM = 11
ACTION_DIM = 2
ARENA = 1.5

POS = slice(0, 2)
VEL = slice(2, 4)
POINT_A = slice(4, 6)
POINT_B = slice(6, 8)
OBJECT = slice(8, 10)
LATCH = 10


class Primitive(str, enum.Enum):
    REACH_A = "reach-a"
    REACH_B = "reach-b"
    PRESS = "press"
    GRASP = "grasp"

    def __str__(self) -> str:
        return self.value

    @property
    def target(self) -> slice:
        if self is Primitive.REACH_A:
            return POINT_A
        if self is Primitive.REACH_B:
            return POINT_B
        return OBJECT


@dataclass(slots=True, frozen=True)
class GoalRanges:
    low: float = -0.9
    high: float = 0.9
    start_jitter: float = 0.1
    min_start_distance: float = 0.4
    min_separation: float = 0.4


@dataclass(slots=True, frozen=True)
class TaskSpec:
    task_id: int
    name: str
    waypoint_template: Tuple[Primitive, ...]
    goal_randomization: GoalRanges = field(default_factory=GoalRanges)


_TEMPLATES: Sequence[Tuple[str, Tuple[Primitive, ...]]] = (
    ("reach-a", (Primitive.REACH_A,)),
    ("reach-b", (Primitive.REACH_B,)),
    ("press", (Primitive.PRESS,)),
    ("pick-place-b", (Primitive.GRASP, Primitive.REACH_B)),
    ("reach-a-then-b", (Primitive.REACH_A, Primitive.REACH_B)),
    ("press-then-a", (Primitive.PRESS, Primitive.REACH_A)),
    ("reach-b-then-press", (Primitive.REACH_B, Primitive.PRESS)),
    ("pick-place-a", (Primitive.GRASP, Primitive.REACH_A)),
    # held out for fine-tuning
    ("reach-a-then-press", (Primitive.REACH_A, Primitive.PRESS)),
    ("reach-b-then-a", (Primitive.REACH_B, Primitive.REACH_A)),
)

TASKS: Dict[int, TaskSpec] = {
    idx: TaskSpec(task_id=idx, name=name, waypoint_template=template)
    for idx, (name, template) in enumerate(_TEMPLATES)
}


def get_task(task_id: int) -> TaskSpec:
    try:
        return TASKS[int(task_id)]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"unknown task id {task_id!r}; known ids are {sorted(TASKS)}") from exc


@dataclass(slots=True)
class EnvState:
    """One episode's full state: observation vector plus bookkeeping."""

    task_id: int
    observation: np.ndarray
    stage: int = 0
    step: int = 0
    done: bool = False
    success: bool = False
    seed: int = 0

    def copy(self) -> "EnvState":
        return replace(self, observation=self.observation.copy())


@dataclass(slots=True)
class BatchState:
    """Lock-step batch of episodes; row ``i`` is one episode."""

    task_ids: np.ndarray
    observations: np.ndarray
    stages: np.ndarray
    steps: np.ndarray
    done: np.ndarray
    success: np.ndarray
    seeds: np.ndarray

    @classmethod
    def from_states(cls, states: Sequence[EnvState]) -> "BatchState":
        return cls(
            task_ids=np.array([s.task_id for s in states], dtype=np.int64),
            observations=np.stack([s.observation for s in states]).astype(np.float64),
            stages=np.array([s.stage for s in states], dtype=np.int64),
            steps=np.array([s.step for s in states], dtype=np.int64),
            done=np.array([s.done for s in states], dtype=bool),
            success=np.array([s.success for s in states], dtype=bool),
            seeds=np.array([s.seed for s in states], dtype=np.int64),
        )

    def row(self, idx: int) -> EnvState:
        return EnvState(
            task_id=int(self.task_ids[idx]),
            observation=self.observations[idx].copy(),
            stage=int(self.stages[idx]),
            step=int(self.steps[idx]),
            done=bool(self.done[idx]),
            success=bool(self.success[idx]),
            seed=int(self.seeds[idx]),
        )

    def __len__(self) -> int:
        return int(self.task_ids.shape[0])


class PointNavSuite:
    """Reset/step logic shared by every task of the suite."""

    def __init__(self, config: Optional[EnvConfig] = None) -> None:
        self.config = config or EnvConfig()

    @property
    def horizon(self) -> int:
        return self.config.horizon

    # ------------------------------------------------------------------
    def reset(self, task_id: int, episode_seed: int) -> EnvState:
        task = get_task(task_id)
        ranges = task.goal_randomization
        rng = np.random.default_rng(int(episode_seed))
        obs = np.zeros(STATE_DIM)
        obs[POS] = rng.uniform(-ranges.start_jitter, ranges.start_jitter, size=2)
        placed: List[np.ndarray] = []
        for slot in (POINT_A, POINT_B, OBJECT):
            while True:
                candidate = rng.uniform(ranges.low, ranges.high, size=2)
                if np.linalg.norm(candidate - obs[POS]) < ranges.min_start_distance:
                    continue
                if any(np.linalg.norm(candidate - other) < ranges.min_separation for other in placed):
                    continue
                break
            obs[slot] = candidate
            placed.append(candidate)
        return EnvState(task_id=task.task_id, observation=obs, seed=int(episode_seed))

    def reset_batch(self, task_ids: Sequence[int], episode_seeds: Sequence[int]) -> BatchState:
        return BatchState.from_states(
            [self.reset(task, seed) for task, seed in zip(task_ids, episode_seeds)]
        )

    def step(self, state: EnvState, action: np.ndarray) -> Tuple[EnvState, float, bool]:
        batch = BatchState.from_states([state])
        rewards = self.step_batch(batch, np.asarray(action, dtype=np.float64).reshape(1, ACTION_DIM))
        return batch.row(0), float(rewards[0]), bool(batch.done[0])

    def step_batch(self, batch: BatchState, actions: np.ndarray) -> np.ndarray:
        """Advance every unfinished row in place; returns per-row rewards."""
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (len(batch), ACTION_DIM):
            raise ConfigError(f"actions must have shape {(len(batch), ACTION_DIM)}, got {actions.shape}")
        if not np.all(np.isfinite(actions)):
            raise NumericError("non-finite action passed to the environment")
        cfg = self.config
        live = ~batch.done
        obs = batch.observations
        actions = np.clip(actions, -1.0, 1.0)

        primitives = [self._current(batch, i) for i in range(len(batch))]
        targets = np.stack([self._target(obs[i], p) for i, p in enumerate(primitives)])
        prev_dist = np.linalg.norm(targets - obs[:, POS], axis=1)

        velocity = cfg.damping * (obs[:, VEL] + actions * cfg.dt)
        position = np.clip(obs[:, POS] + velocity * cfg.dt, -ARENA, ARENA)
        holding = obs[:, LATCH] == 1.0

        new_obs = obs.copy()
        new_obs[:, VEL] = velocity
        new_obs[:, POS] = position
        new_obs[holding, OBJECT] = position[holding]
        targets = np.stack([self._target(new_obs[i], p) for i, p in enumerate(primitives)])
        new_dist = np.linalg.norm(targets - position, axis=1)
        speed = np.linalg.norm(velocity, axis=1)

        rewards = cfg.progress_scale * (prev_dist - new_dist) - cfg.time_penalty
        for i, primitive in enumerate(primitives):
            if not live[i] or primitive is None:
                continue
            reached = new_dist[i] <= cfg.goal_radius
            if primitive is Primitive.PRESS:
                reached = reached and speed[i] <= cfg.press_speed
            if not reached:
                continue
            rewards[i] += cfg.waypoint_bonus
            batch.stages[i] += 1
            if primitive is Primitive.PRESS:
                new_obs[i, LATCH] = -1.0
            elif primitive is Primitive.GRASP:
                new_obs[i, LATCH] = 1.0
                new_obs[i, OBJECT] = position[i]

        rewards = np.where(live, rewards, 0.0)
        batch.observations = np.where(live[:, None], new_obs, obs)
        batch.steps = batch.steps + live.astype(np.int64)
        finished = np.array(
            [batch.stages[i] >= len(get_task(t).waypoint_template) for i, t in enumerate(batch.task_ids)]
        )
        batch.success = batch.success | (finished & live)
        batch.done = batch.done | finished | (batch.steps >= cfg.horizon)
        return rewards

    # ------------------------------------------------------------------
    @staticmethod
    def _current(batch: BatchState, idx: int) -> Optional[Primitive]:
        template = get_task(int(batch.task_ids[idx])).waypoint_template
        stage = int(batch.stages[idx])
        return template[stage] if stage < len(template) else None

    @staticmethod
    def _target(obs: np.ndarray, primitive: Optional[Primitive]) -> np.ndarray:
        if primitive is None:
            return obs[POS].copy()
        return obs[primitive.target].copy()

    def current_target(self, state: EnvState) -> Optional[np.ndarray]:
        template = get_task(state.task_id).waypoint_template
        if state.stage >= len(template):
            return None
        return state.observation[template[state.stage].target].copy()


def env_reset(task: TaskSpec | int, episode_seed: int, config: Optional[EnvConfig] = None) -> EnvState:
    task_id = task.task_id if isinstance(task, TaskSpec) else task
    return PointNavSuite(config).reset(task_id, episode_seed)


def env_step(
    state: EnvState, action: np.ndarray, config: Optional[EnvConfig] = None
) -> Tuple[EnvState, float, bool]:
    return PointNavSuite(config).step(state, action)


__all__ = [
    "STATE_DIM",
    "ACTION_DIM",
    "ARENA",
    "Primitive",
    "GoalRanges",
    "TaskSpec",
    "TASKS",
    "get_task",
    "EnvState",
    "BatchState",
    "PointNavSuite",
    "env_reset",
    "env_step",
]
