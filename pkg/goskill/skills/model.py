"""Skill model: goal encoder + codebook + decoder, and the extraction phase."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from goskill.compute import Adam, Module, Tensor, initialize, mse_loss, no_grad, state_checksum, straight_through
from goskill.config.settings import AblationConfig, NetworkConfig, OptimConfig, SkillConfig
from goskill.envs.dataset import OfflineDataset
from goskill.envs.point_nav import ACTION_DIM, STATE_DIM
from goskill.errors import DataError

from .codebook import SkillCodebook, vq_loss
from .decoder import SkillDecoder
from .encoder import GoalEncoder

LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class SegmentBatch:
    """``B`` windows of ``H`` steps: states [B, H+1, S], actions [B, H, A]."""

    states: np.ndarray
    actions: np.ndarray
    task_ids: np.ndarray

    def __len__(self) -> int:
        return int(self.states.shape[0])


@dataclass(slots=True)
class ExtractionLosses:
    total: float
    mse: float
    vq: float
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


class SkillModel(Module):
    """Everything needed to turn windows into skills and skills into actions."""

    def __init__(
        self,
        skill: Optional[SkillConfig] = None,
        network: Optional[NetworkConfig] = None,
        ablation: Optional[AblationConfig] = None,
        state_dim: int = STATE_DIM,
        action_dim: int = ACTION_DIM,
    ) -> None:
        super().__init__()
        self.skill_config = skill or SkillConfig()
        self.ablation = ablation or AblationConfig()
        self.horizon = self.skill_config.horizon
        self.state_dim = state_dim
        self.action_dim = action_dim
        encoder_in = self.horizon * action_dim if self.ablation.action_encoded else state_dim
        latent = self.skill_config.latent_dim
        self.encoder = GoalEncoder(encoder_in, latent, self.skill_config.encoder_hidden)
        self.codebook = SkillCodebook(self.skill_config.codebook_size, latent, self.skill_config.commitment)
        self.decoder = SkillDecoder(state_dim, action_dim, latent, self.horizon, network)

    @property
    def latent_dim(self) -> int:
        return self.skill_config.latent_dim

    @property
    def uses_reached_goals(self) -> bool:
        # action-encoded skills never see state differences
        return self.ablation.reached_goal and not self.ablation.action_encoded

    # ------------------------------------------------------------------
    def goal_embedding(self, states: np.ndarray, actions: np.ndarray) -> Tensor:
        """Skill-level goal for windows with states [B, L+1, S] and actions [B, L, A]."""
        if self.ablation.action_encoded:
            return self.encoder(Tensor(self._action_chunk(actions)))
        return self.encoder(Tensor(states[:, -1] - states[:, 0]))

    def reached_goals(self, states: np.ndarray, origin: Optional[np.ndarray] = None) -> Tensor:
        """``G(s_t - s_origin)`` for each step of states [B, L, S]; zeros when disabled."""
        batch, length, _ = states.shape
        if not self.uses_reached_goals:
            return Tensor(np.zeros((batch, length, self.latent_dim)))
        origin = states[:, :1] if origin is None else origin.reshape(batch, 1, -1)
        return self.encoder(Tensor(states - origin))

    def _action_chunk(self, actions: np.ndarray) -> np.ndarray:
        batch, length, width = actions.shape
        chunk = np.zeros((batch, self.horizon, width))
        chunk[:, :length] = actions[:, : self.horizon]
        return chunk.reshape(batch, self.horizon * width)

    def window_latents(self, states: np.ndarray, actions: np.ndarray, starts: Sequence[int], ends: Sequence[int]) -> np.ndarray:
        """Goal embeddings of windows ``[start, end)`` of one trajectory; partial windows allowed."""
        starts = np.asarray(starts, dtype=np.int64)
        ends = np.asarray(ends, dtype=np.int64)
        if self.ablation.action_encoded:
            inputs = np.stack(
                [self._action_chunk(actions[None, s:e])[0] for s, e in zip(starts, ends)]
            )
        else:
            inputs = states[ends] - states[starts]
        with no_grad():
            return self.encoder(Tensor(inputs)).data

    def skill_indices(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Skill index per window without touching usage counters."""
        with no_grad():
            z = self.goal_embedding(states, actions)
        return self.codebook.nearest(z.data)

    def frozen_checksum(self) -> str:
        """Checksum of the parts frozen after extraction (encoder and codebook)."""
        state = {f"encoder.{k}": v for k, v in self.encoder.state_dict().items()}
        state.update({f"codebook.{k}": v for k, v in self.codebook.state_dict().items()})
        return state_checksum(state)

    def freeze_extracted(self) -> None:
        self.encoder.freeze()
        self.codebook.freeze()

    # ------------------------------------------------------------------
    def extraction_loss(self, batch: SegmentBatch, count_usage: bool = True) -> Tuple[Tensor, Tensor, Optional[Tensor], np.ndarray]:
        """Joint loss over a batch of full windows: (total, mse, vq, indices)."""
        horizon = self.horizon
        states, actions = batch.states, batch.actions
        if self.uses_reached_goals:
            # one encoder pass gives reached-goals for offsets 0..H-1 and the goal at H
            latent = self.encoder(Tensor(states - states[:, :1]))
            goal = latent[:, horizon]
            reached = latent[:, :horizon]
        else:
            goal = self.goal_embedding(states, actions)
            reached = self.reached_goals(states[:, :horizon])
        indices, selected = self.codebook.quantize(goal, count=count_usage)
        if self.ablation.vq:
            prompt = straight_through(goal, selected)
            commit = vq_loss(goal, selected, self.codebook.commitment)
        else:
            prompt, commit = goal, None
        predicted = self.decoder(prompt, states[:, :horizon], reached, actions)
        mse = mse_loss(predicted, actions)
        total = mse if commit is None else mse + commit
        return total, mse, commit, indices

    def reconstruction_loss(self, batch: SegmentBatch, indices: Optional[np.ndarray] = None) -> Tensor:
        """Decoder-only MSE with the skill prompt taken from the frozen codebook."""
        horizon = self.horizon
        with no_grad():
            goal = self.goal_embedding(batch.states, batch.actions)
            reached = self.reached_goals(batch.states[:, :horizon])
        if self.ablation.vq:
            indices = self.codebook.nearest(goal.data) if indices is None else indices
            prompt = Tensor(self.codebook.lookup(indices))
        else:
            prompt = Tensor(goal.data)
        predicted = self.decoder(prompt, batch.states[:, :horizon], Tensor(reached.data), batch.actions)
        return mse_loss(predicted, batch.actions)


def build_skill_model(
    skill: SkillConfig,
    network: NetworkConfig,
    ablation: AblationConfig,
    seed: int,
) -> SkillModel:
    model = SkillModel(skill, network, ablation)
    initialize(model, seed)
    model.decoder.transformer.seed_dropout(seed)
    return model


# ----------------------------------------------------------------------
def sample_windows(
    dataset: OfflineDataset,
    horizon: int,
    batch_per_task: int,
    rng: np.random.Generator,
    tasks: Optional[Sequence[int]] = None,
) -> SegmentBatch:
    """Uniform full ``H``-step windows, ``batch_per_task`` from each task, concatenated."""
    states: List[np.ndarray] = []
    actions: List[np.ndarray] = []
    task_ids: List[int] = []
    for task_id in tasks if tasks is not None else dataset.tasks:
        candidates = [t for t in dataset.for_task(task_id) if t.length >= horizon]
        if not candidates:
            continue
        for _ in range(batch_per_task):
            traj = candidates[rng.integers(len(candidates))]
            start = int(rng.integers(traj.length - horizon + 1))
            states.append(traj.states[start : start + horizon + 1])
            actions.append(traj.actions[start : start + horizon])
            task_ids.append(task_id)
    if not states:
        raise DataError(f"no trajectory has at least {horizon} steps")
    return SegmentBatch(np.stack(states), np.stack(actions), np.array(task_ids, dtype=np.int64))


def aligned_windows(dataset: OfflineDataset, horizon: int, limit: Optional[int] = None) -> SegmentBatch:
    """Non-overlapping full windows starting at multiples of ``H``, in dataset order."""
    states: List[np.ndarray] = []
    actions: List[np.ndarray] = []
    task_ids: List[int] = []
    for traj in dataset:
        for start in range(0, traj.length - horizon + 1, horizon):
            states.append(traj.states[start : start + horizon + 1])
            actions.append(traj.actions[start : start + horizon])
            task_ids.append(traj.task_id)
            if limit is not None and len(states) >= limit:
                break
        if limit is not None and len(states) >= limit:
            break
    if not states:
        raise DataError(f"no trajectory has at least {horizon} steps")
    return SegmentBatch(np.stack(states), np.stack(actions), np.array(task_ids, dtype=np.int64))


class SkillExtractor:
    """Owns the extraction optimiser, codebook seeding, dead codes and churn."""

    def __init__(
        self,
        model: SkillModel,
        optim: Optional[OptimConfig] = None,
        seed: int = 0,
        probe: Optional[SegmentBatch] = None,
    ) -> None:
        optim = optim or OptimConfig()
        self.model = model
        self.config = model.skill_config
        self.rng = np.random.default_rng([seed, 11])
        self.optimizer = Adam(
            model.parameters(),
            lr=optim.lr,
            betas=(optim.beta1, optim.beta2),
            eps=optim.eps,
            clip_norm=optim.clip_norm,
        )
        self.steps = 0
        self.seeded = False
        self.reseeded = 0
        self.probe = probe
        self._probe_indices: Optional[np.ndarray] = None
        self.churn: List[Tuple[int, float]] = []

    def extraction_step(self, batch: SegmentBatch) -> ExtractionLosses:
        model = self.model
        model.train()
        if not self.seeded:
            with no_grad():
                goals = model.goal_embedding(batch.states, batch.actions)
            model.codebook.seed_from(goals.data, self.rng)
            self.seeded = True
        self.optimizer.zero_grad()
        total, mse, commit, indices = model.extraction_loss(batch)
        total.backward()
        self.optimizer.step()
        self.steps += 1
        if model.ablation.vq:
            model.codebook.step_idle(indices)
            with no_grad():
                goals = model.goal_embedding(batch.states, batch.actions)
            dead = model.codebook.dead_codes(self.config.dead_code_steps)
            if model.codebook.reseed_dead(goals.data, self.rng, self.config.dead_code_steps):
                # moved rows start with fresh moment estimates
                self.optimizer.reset_moments("codebook.embeddings", dead)
                self.reseeded += int(dead.size)
        if self.probe is not None and self.steps % self.config.churn_interval == 0:
            self.record_churn()
        return ExtractionLosses(
            total=total.item(),
            mse=mse.item(),
            vq=commit.item() if commit is not None else 0.0,
            indices=indices,
        )

    def record_churn(self) -> float:
        """Fraction of probe windows whose skill index changed since the last probe."""
        current = self.model.skill_indices(self.probe.states, self.probe.actions)
        changed = 1.0 if self._probe_indices is None else float(np.mean(current != self._probe_indices))
        self._probe_indices = current
        self.churn.append((self.steps, changed))
        LOGGER.info("Extraction step %d: assignment churn %.3f", self.steps, changed)
        return changed


def extraction_step(extractor: SkillExtractor, batch: SegmentBatch) -> ExtractionLosses:
    return extractor.extraction_step(batch)


def usage_summary(model: SkillModel) -> Dict[str, object]:
    usage = model.codebook.usage
    return {"usage": usage.tolist(), "active_codes": int(np.count_nonzero(usage))}


__all__ = [
    "SegmentBatch",
    "ExtractionLosses",
    "SkillModel",
    "SkillExtractor",
    "build_skill_model",
    "sample_windows",
    "aligned_windows",
    "extraction_step",
    "usage_summary",
]
