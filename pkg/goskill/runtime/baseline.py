"""Flat prompt-conditioned action-level transformer used as the comparison point.

Tokens are ``(return-to-go, state, action)`` triples over the most recent
``K`` raw steps, preceded by ``K*`` triples from the best demonstration of
the task. The action at step ``t`` is read from the state token at ``t``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from goskill.compute import Adam, CausalTransformer, Linear, Module, Parameter, Tensor, initialize, mse_loss, stack
from goskill.compute.tensor import concat, getitem
from goskill.config.settings import NetworkConfig, OptimConfig, RunConfig
from goskill.envs.dataset import OfflineDataset, Trajectory
from goskill.envs.point_nav import ACTION_DIM, STATE_DIM, BatchState, PointNavSuite
from goskill.errors import ContractError, DataError

from .evaluation import EvalReport, evaluate
from .rollout import BaseAgent, EpisodeLog

LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class FlatPrompt:
    task_id: int
    rtg: np.ndarray  # [K*]
    states: np.ndarray  # [K*, S]
    actions: np.ndarray  # [K*, A]
    mask: np.ndarray  # [K*]
    source: int = 0

    @property
    def max_return(self) -> float:
        return float(self.rtg[0])


@dataclass(slots=True)
class FlatBatch:
    prompt_rtg: np.ndarray
    prompt_states: np.ndarray
    prompt_actions: np.ndarray
    prompt_mask: np.ndarray
    rtg: np.ndarray  # [B, K]
    states: np.ndarray  # [B, K, S]
    actions: np.ndarray  # [B, K, A]
    timesteps: np.ndarray  # [B, K]
    present: np.ndarray  # [B, K]

    def __len__(self) -> int:
        return int(self.rtg.shape[0])


def flat_prompt(task_id: int, dataset: OfflineDataset, seed: int = 0, prompt_length: int = 10) -> FlatPrompt:
    """First ``K*`` steps of the highest-return trajectory of the task."""
    candidates = [t for t in dataset.for_task(task_id) if t.length > 0]
    if not candidates:
        raise DataError(f"task {task_id} has no demonstrations to build a prompt from")
    returns = np.array([t.total_return for t in candidates])
    best = np.flatnonzero(returns == returns.max())
    choice = int(best[0]) if len(best) == 1 else int(np.random.default_rng([seed, task_id]).choice(best))
    demo = candidates[choice]
    count = min(prompt_length, demo.length)
    mask = np.zeros(prompt_length, dtype=bool)
    mask[:count] = True
    rtg = np.zeros(prompt_length)
    rtg[:count] = demo.returns_to_go()[:count]
    states = np.zeros((prompt_length, demo.states.shape[1]))
    states[:count] = demo.states[:count]
    actions = np.zeros((prompt_length, demo.actions.shape[1]))
    actions[:count] = demo.actions[:count]
    return FlatPrompt(task_id, rtg, states, actions, mask, source=choice)


class FlatPromptTransformer(Module):
    def __init__(
        self,
        state_dim: int = STATE_DIM,
        action_dim: int = ACTION_DIM,
        prompt_length: int = 10,
        max_timestep: int = 101,
        network: Optional[NetworkConfig] = None,
        return_scale: float = 0.01,
    ) -> None:
        super().__init__()
        network = network or NetworkConfig()
        width = network.width
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.prompt_length = prompt_length
        self.max_timestep = max_timestep
        self.return_scale = return_scale
        self.embed_rtg = Linear(1, width)
        self.embed_state = Linear(state_dim, width)
        self.embed_action = Linear(action_dim, width)
        self.prompt_position = Parameter((prompt_length, width))
        self.timestep = Parameter((max_timestep, width))
        self.transformer = CausalTransformer(width, network.n_layers, network.n_heads, network.dropout)
        self.head = Linear(width, action_dim)

    def _triples(self, rtg: np.ndarray, states: np.ndarray, actions: np.ndarray, position: Tensor) -> Tensor:
        batch, length = rtg.shape
        tokens = stack(
            [
                self.embed_rtg(Tensor(rtg[..., None] * self.return_scale)),
                self.embed_state(Tensor(states)),
                self.embed_action(Tensor(actions)),
            ],
            axis=2,
        )
        tokens = tokens + position.reshape(batch, length, 1, -1)
        return tokens.reshape(batch, 3 * length, -1)

    def __call__(self, batch: FlatBatch) -> Tensor:
        """Predicted actions [B, K, A] in [-1, 1]."""
        b, k = batch.rtg.shape
        kp = batch.prompt_rtg.shape[1]
        if batch.states.shape != (b, k, self.state_dim) or batch.actions.shape != (b, k, self.action_dim):
            raise ContractError(
                f"flat tokens misaligned: states {batch.states.shape}, actions {batch.actions.shape}"
            )
        if kp > self.prompt_length:
            raise ContractError(f"prompt of {kp} steps exceeds configured length {self.prompt_length}")
        prompt_pos = getitem(self.prompt_position, np.broadcast_to(np.arange(kp), (b, kp)))
        steps = np.clip(np.asarray(batch.timesteps, dtype=np.int64), 0, self.max_timestep - 1)
        history_pos = getitem(self.timestep, steps)
        sequence = concat(
            [
                self._triples(batch.prompt_rtg, batch.prompt_states, batch.prompt_actions, prompt_pos),
                self._triples(batch.rtg, batch.states, batch.actions, history_pos),
            ],
            axis=1,
        )
        key_mask = np.concatenate(
            [np.repeat(batch.prompt_mask, 3, axis=1), np.repeat(batch.present, 3, axis=1)], axis=1
        )
        hidden = self.transformer(sequence, key_mask)
        state_slots = 3 * kp + 3 * np.arange(k) + 1
        return self.head(getitem(hidden, (slice(None), state_slots))).tanh()


def build_flat_baseline(config: RunConfig, seed: Optional[int] = None) -> FlatPromptTransformer:
    seed = config.seed if seed is None else seed
    model = FlatPromptTransformer(
        prompt_length=config.baseline.prompt_length,
        max_timestep=config.env.horizon + 1,
        network=config.network,
        return_scale=config.policy.return_scale,
    )
    initialize(model, seed + 2)
    model.transformer.seed_dropout(seed + 2)
    return model


def assemble_flat_batch(
    windows: Sequence[Tuple[Trajectory, int]],
    prompts: Sequence[FlatPrompt],
    context_length: int,
) -> FlatBatch:
    if not windows:
        raise DataError("cannot assemble an empty baseline batch")
    b, k = len(windows), context_length
    rtg = np.zeros((b, k))
    states = np.zeros((b, k, STATE_DIM))
    actions = np.zeros((b, k, ACTION_DIM))
    timesteps = np.zeros((b, k), dtype=np.int64)
    present = np.zeros((b, k), dtype=bool)
    for row, (traj, start) in enumerate(windows):
        stop = min(start + k, traj.length)
        n = stop - start
        rtg[row, :n] = traj.returns_to_go()[start:stop]
        states[row, :n] = traj.states[start:stop]
        actions[row, :n] = traj.actions[start:stop]
        timesteps[row, :n] = np.arange(start, stop)
        present[row, :n] = True
    return FlatBatch(
        prompt_rtg=np.stack([p.rtg for p in prompts]),
        prompt_states=np.stack([p.states for p in prompts]),
        prompt_actions=np.stack([p.actions for p in prompts]),
        prompt_mask=np.stack([p.mask for p in prompts]),
        rtg=rtg,
        states=states,
        actions=actions,
        timesteps=timesteps,
        present=present,
    )


def sample_flat_batch(
    dataset: OfflineDataset,
    prompts: Dict[int, FlatPrompt],
    batch_per_task: int,
    context_length: int,
    rng: np.random.Generator,
    tasks: Optional[Sequence[int]] = None,
) -> FlatBatch:
    windows: List[Tuple[Trajectory, int]] = []
    row_prompts: List[FlatPrompt] = []
    for task_id in tasks if tasks is not None else dataset.tasks:
        candidates = [t for t in dataset.for_task(task_id) if t.length > 0]
        if not candidates:
            continue
        for _ in range(batch_per_task):
            traj = candidates[rng.integers(len(candidates))]
            start = int(rng.integers(max(1, traj.length - context_length + 1)))
            windows.append((traj, start))
            row_prompts.append(prompts[task_id])
    return assemble_flat_batch(windows, row_prompts, context_length)


class FlatBaselineTrainer:
    def __init__(self, model: FlatPromptTransformer, optim: Optional[OptimConfig] = None) -> None:
        optim = optim or OptimConfig()
        self.model = model
        self.optimizer = Adam(
            model.parameters(),
            lr=optim.lr,
            betas=(optim.beta1, optim.beta2),
            eps=optim.eps,
            clip_norm=optim.clip_norm,
        )
        self.steps = 0

    def loss(self, batch: FlatBatch) -> Tensor:
        return mse_loss(self.model(batch), batch.actions, batch.present)

    def train_step(self, batch: FlatBatch) -> float:
        self.model.train()
        self.optimizer.zero_grad()
        loss = self.loss(batch)
        loss.backward()
        self.optimizer.step()
        self.steps += 1
        return loss.item()


class FlatBaselineAgent(BaseAgent):
    """Acts every step from the last ``K`` raw steps and the task prompt."""

    name = "flat-baseline"

    def __init__(self, model: FlatPromptTransformer, prompts: Dict[int, FlatPrompt], context_length: int = 20) -> None:
        self.model = model
        self.prompts = prompts
        self.context_length = context_length

    def eval(self) -> "FlatBaselineAgent":
        self.model.eval()
        return self

    def begin(self, task_id: int, batch: BatchState, logs: Sequence[EpisodeLog]) -> None:
        if task_id not in self.prompts:
            raise DataError(f"no baseline prompt for task {task_id}")
        self.prompt = self.prompts[task_id]
        n = len(batch)
        self.rtg = np.full(n, self.prompt.max_return)
        self.t = 0
        self.history: List[List[np.ndarray]] = [[], [], []]

    def act(self, batch: BatchState, logs: Sequence[EpisodeLog]) -> np.ndarray:
        n = len(batch)
        rtg_hist, state_hist, action_hist = self.history
        rtg_hist.append(self.rtg.copy())
        state_hist.append(batch.observations.copy())
        action_hist.append(np.zeros((n, ACTION_DIM)))
        k = min(len(rtg_hist), self.context_length)
        first = self.t - k + 1
        flat = FlatBatch(
            prompt_rtg=np.broadcast_to(self.prompt.rtg, (n, len(self.prompt.rtg))).copy(),
            prompt_states=np.broadcast_to(self.prompt.states, (n, *self.prompt.states.shape)).copy(),
            prompt_actions=np.broadcast_to(self.prompt.actions, (n, *self.prompt.actions.shape)).copy(),
            prompt_mask=np.broadcast_to(self.prompt.mask, (n, len(self.prompt.mask))).copy(),
            rtg=np.stack(rtg_hist[-k:], axis=1),
            states=np.stack(state_hist[-k:], axis=1),
            actions=np.stack(action_hist[-k:], axis=1),
            timesteps=np.tile(np.arange(first, self.t + 1, dtype=np.int64), (n, 1)),
            present=np.ones((n, k), dtype=bool),
        )
        return self.model(flat).data[:, -1]

    def observe(self, batch: BatchState, actions: np.ndarray, rewards: np.ndarray) -> None:
        self.history[2][-1] = np.clip(actions, -1.0, 1.0)
        self.rtg = self.rtg - rewards
        self.t += 1


def train_flat_baseline(
    dataset: OfflineDataset,
    config: RunConfig,
    tasks: Optional[Sequence[int]] = None,
    seed: Optional[int] = None,
    iterations: Optional[int] = None,
    model: Optional[FlatPromptTransformer] = None,
) -> Tuple[FlatPromptTransformer, Dict[int, FlatPrompt], List[float]]:
    seed = config.seed if seed is None else seed
    tasks = list(tasks) if tasks is not None else dataset.tasks
    iterations = config.baseline.iterations if iterations is None else iterations
    model = model or build_flat_baseline(config, seed)
    prompts = {task: flat_prompt(task, dataset, seed, config.baseline.prompt_length) for task in tasks}
    trainer = FlatBaselineTrainer(model, config.optim)
    rng = np.random.default_rng([seed, 31])
    losses: List[float] = []
    for step in range(1, iterations + 1):
        batch = sample_flat_batch(dataset, prompts, config.baseline.batch_per_task, config.baseline.context_length, rng, tasks)
        losses.append(trainer.train_step(batch))
        if step % config.schedule.log_interval == 0:
            LOGGER.info("Baseline step %d/%d: mse %.5f", step, iterations, losses[-1])
    return model, prompts, losses


def flat_baseline_train_and_eval(
    dataset: OfflineDataset,
    config: RunConfig,
    tasks: Optional[Sequence[int]] = None,
    seed: Optional[int] = None,
    suite: Optional[PointNavSuite] = None,
) -> EvalReport:
    """Train the flat learner on ``dataset`` and evaluate it with the shared protocol."""
    tasks = list(tasks) if tasks is not None else dataset.tasks
    model, prompts, _ = train_flat_baseline(dataset, config, tasks, seed)
    agent = FlatBaselineAgent(model, prompts, config.baseline.context_length)
    return evaluate(
        agent,
        suite or PointNavSuite(config.env),
        tasks,
        config.evaluation.episodes,
        config.evaluation.seeds,
        config.evaluation.seed,
        num_skills=config.skill.codebook_size,
    )


__all__ = [
    "FlatPrompt",
    "FlatBatch",
    "FlatPromptTransformer",
    "FlatBaselineTrainer",
    "FlatBaselineAgent",
    "flat_prompt",
    "build_flat_baseline",
    "assemble_flat_batch",
    "sample_flat_batch",
    "train_flat_baseline",
    "flat_baseline_train_and_eval",
]
