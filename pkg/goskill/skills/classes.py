"""Skill-class partitions, class-balanced resampling and decoder enhancement."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from goskill.compute import Adam
from goskill.config.settings import OptimConfig
from goskill.envs.dataset import OfflineDataset
from goskill.errors import DataError

from .model import SegmentBatch, SkillModel

LOGGER = logging.getLogger(__name__)

ASSIGNMENT_COLUMNS = ("task_id", "trajectory", "segment_start_t", "skill_index")


@dataclass(slots=True, frozen=True)
class SegmentRef:
    task_id: int
    trajectory: int
    start: int


@dataclass(slots=True)
class SkillClassDataset:
    """Aligned full segments grouped by skill index."""

    horizon: int
    num_skills: int
    segments: List[SegmentRef]
    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    classes: Dict[int, List[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.classes:
            self.classes = {k: [] for k in range(self.num_skills)}
            for pos, skill in enumerate(self.indices.tolist()):
                self.classes[int(skill)].append(pos)

    def __len__(self) -> int:
        return len(self.segments)

    def sizes(self) -> np.ndarray:
        return np.array([len(self.classes[k]) for k in range(self.num_skills)], dtype=np.int64)

    def non_empty(self) -> List[int]:
        return [k for k in range(self.num_skills) if self.classes[k]]

    def batch(self, positions: Sequence[int]) -> SegmentBatch:
        positions = np.asarray(positions, dtype=np.int64)
        task_ids = np.array([self.segments[p].task_id for p in positions], dtype=np.int64)
        return SegmentBatch(self.states[positions], self.actions[positions], task_ids)

    def task_histogram(self, tasks: Sequence[int]) -> np.ndarray:
        """Counts [len(tasks), M] of segments per (task, skill)."""
        row = {task: i for i, task in enumerate(tasks)}
        counts = np.zeros((len(tasks), self.num_skills), dtype=np.int64)
        for ref, skill in zip(self.segments, self.indices.tolist()):
            if ref.task_id in row:
                counts[row[ref.task_id], skill] += 1
        return counts

    def write_csv(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(ASSIGNMENT_COLUMNS)
            for ref, skill in zip(self.segments, self.indices.tolist()):
                writer.writerow((ref.task_id, ref.trajectory, ref.start, skill))
        return path


def assign_skill_classes(dataset: OfflineDataset, model: SkillModel) -> SkillClassDataset:
    """Label every aligned full segment with its nearest code (frozen model)."""
    horizon = model.horizon
    refs: List[SegmentRef] = []
    states: List[np.ndarray] = []
    actions: List[np.ndarray] = []
    for task_id in dataset.tasks:
        for traj_idx, traj in enumerate(dataset.for_task(task_id)):
            for start in range(0, traj.length - horizon + 1, horizon):
                refs.append(SegmentRef(task_id, traj_idx, start))
                states.append(traj.states[start : start + horizon + 1])
                actions.append(traj.actions[start : start + horizon])
    if refs:
        state_arr, action_arr = np.stack(states), np.stack(actions)
        indices = model.skill_indices(state_arr, action_arr)
    else:
        state_arr = np.zeros((0, horizon + 1, model.state_dim))
        action_arr = np.zeros((0, horizon, model.action_dim))
        indices = np.zeros(0, dtype=np.int64)
    classes = SkillClassDataset(
        horizon=horizon,
        num_skills=model.codebook.size,
        segments=refs,
        indices=np.asarray(indices, dtype=np.int64),
        states=state_arr,
        actions=action_arr,
    )
    empty = model.codebook.size - len(classes.non_empty())
    LOGGER.info(
        "Assigned %d segments to %d skill classes (%d empty)", len(refs), model.codebook.size, empty
    )
    return classes


class SkillClassSampler:
    """Draws segments uniformly over non-empty classes (or over segments when disabled)."""

    def __init__(self, classes: SkillClassDataset, rng: np.random.Generator, resample: bool = True) -> None:
        self.classes = classes
        self.rng = rng
        self.resample = resample
        self.active = classes.non_empty()
        if not self.active:
            raise DataError("every skill class is empty; nothing to enhance")

    def draw(self, count: int) -> np.ndarray:
        """``count`` segment positions; with resampling each draw picks a class uniformly first."""
        if not self.resample:
            return self.rng.integers(len(self.classes), size=count)
        picks = self.rng.integers(len(self.active), size=count)
        out = np.empty(count, dtype=np.int64)
        for i, pick in enumerate(picks):
            members = self.classes.classes[self.active[pick]]
            out[i] = members[self.rng.integers(len(members))]
        return out

    def draw_per_class(self, per_class: int) -> np.ndarray:
        """One minibatch of ``per_class`` segments for each non-empty class."""
        if not self.resample:
            return self.rng.integers(len(self.classes), size=per_class * len(self.active))
        parts = []
        for skill in self.active:
            members = np.asarray(self.classes.classes[skill], dtype=np.int64)
            parts.append(members[self.rng.integers(len(members), size=per_class)])
        return np.concatenate(parts)


class SkillEnhancer:
    """Decoder-only training on class-balanced batches; encoder and codebook stay frozen."""

    def __init__(
        self,
        model: SkillModel,
        classes: SkillClassDataset,
        optim: Optional[OptimConfig] = None,
        seed: int = 0,
        batch_per_class: int = 4,
    ) -> None:
        optim = optim or OptimConfig()
        model.freeze_extracted()
        self.model = model
        self.classes = classes
        self.batch_per_class = batch_per_class
        self.sampler = SkillClassSampler(
            classes, np.random.default_rng([seed, 23]), resample=model.ablation.resample
        )
        self.optimizer = Adam(
            model.decoder.parameters(),
            lr=optim.lr,
            betas=(optim.beta1, optim.beta2),
            eps=optim.eps,
            clip_norm=optim.clip_norm,
        )
        self.steps = 0

    def enhancement_step(self) -> float:
        positions = self.sampler.draw_per_class(self.batch_per_class)
        batch = self.classes.batch(positions)
        self.model.decoder.train()
        self.optimizer.zero_grad()
        loss = self.model.reconstruction_loss(batch, self.classes.indices[positions])
        loss.backward()
        self.optimizer.step()
        self.steps += 1
        return loss.item()


def enhancement_step(enhancer: SkillEnhancer) -> float:
    return enhancer.enhancement_step()


@dataclass(slots=True)
class UsageReport:
    tasks: List[int]
    dataset_counts: np.ndarray
    eval_counts: np.ndarray

    def write_csv(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        num_skills = self.dataset_counts.shape[1]
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["source", "task_id", *[f"skill_{k}" for k in range(num_skills)]])
            for source, matrix in (("dataset", self.dataset_counts), ("evaluation", self.eval_counts)):
                for task, row in zip(self.tasks, matrix):
                    writer.writerow([source, task, *row.tolist()])
        return path

    def reused_cells(self) -> List[tuple]:
        """(task, skill) cells used at evaluation but rare in that task's own data."""
        cells = []
        for i, task in enumerate(self.tasks):
            data_row = self.dataset_counts[i]
            threshold = np.quantile(data_row, 0.25)
            for skill in np.flatnonzero(self.eval_counts[i] > 0):
                if data_row[skill] <= threshold:
                    cells.append((task, int(skill)))
        return cells


def codebook_usage_report(
    classes: SkillClassDataset,
    eval_counts: Optional[np.ndarray] = None,
    tasks: Optional[Sequence[int]] = None,
) -> UsageReport:
    tasks = list(tasks) if tasks is not None else sorted({ref.task_id for ref in classes.segments})
    dataset_counts = classes.task_histogram(tasks)
    if eval_counts is None:
        eval_counts = np.zeros_like(dataset_counts)
    return UsageReport(tasks=tasks, dataset_counts=dataset_counts, eval_counts=np.asarray(eval_counts, dtype=np.int64))


__all__ = [
    "ASSIGNMENT_COLUMNS",
    "SegmentRef",
    "SkillClassDataset",
    "SkillClassSampler",
    "SkillEnhancer",
    "UsageReport",
    "assign_skill_classes",
    "codebook_usage_report",
    "enhancement_step",
]
