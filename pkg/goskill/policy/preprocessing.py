"""Turn trajectories into decision-point records for the skill policy."""
from __future__ import annotations

import hashlib
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional

import numpy as np

from goskill.envs.dataset import OfflineDataset, Trajectory, return_to_go
from goskill.errors import DatasetFormatError
from goskill.skills.model import SkillModel

LOGGER = logging.getLogger(__name__)

CACHE_VERSION = 1


@dataclass(slots=True)
class PolicySequence:
    """Records at ``T = 0, H, 2H, ...``; the last one is masked when its window is short."""

    task_id: int
    trajectory: int
    rtg: np.ndarray
    states: np.ndarray
    embeddings: np.ndarray
    targets: np.ndarray
    valid: np.ndarray
    total_return: float

    def __len__(self) -> int:
        return int(len(self.rtg))


@dataclass(slots=True)
class PolicyStore:
    horizon: int
    sequences: Dict[int, List[PolicySequence]]

    @property
    def tasks(self) -> List[int]:
        return sorted(self.sequences)

    def for_task(self, task_id: int) -> List[PolicySequence]:
        return self.sequences.get(task_id, [])

    def __iter__(self) -> Iterator[PolicySequence]:
        for task_id in self.tasks:
            yield from self.sequences[task_id]

    def __len__(self) -> int:
        return sum(len(items) for items in self.sequences.values())


def decision_points(length: int, horizon: int) -> np.ndarray:
    return np.arange(0, max(length, 1), horizon, dtype=np.int64)


def preprocess_trajectory(traj: Trajectory, model: SkillModel, trajectory: int = 0) -> PolicySequence:
    horizon = model.horizon
    starts = decision_points(traj.length, horizon)
    ends = np.minimum(starts + horizon, traj.length)
    latents = model.window_latents(traj.states, traj.actions, starts, ends)
    targets = model.codebook.nearest(latents)
    embeddings = model.codebook.lookup(targets) if model.ablation.vq else latents
    rtg = return_to_go(traj)
    return PolicySequence(
        task_id=traj.task_id,
        trajectory=trajectory,
        rtg=rtg[starts] if traj.length else np.zeros(1),
        states=traj.states[starts].copy(),
        embeddings=np.asarray(embeddings, dtype=np.float64),
        targets=np.asarray(targets, dtype=np.int64),
        valid=(ends - starts) == horizon,
        total_return=traj.total_return,
    )


def preprocess_policy_dataset(dataset: OfflineDataset, model: SkillModel) -> PolicyStore:
    """Annotate every trajectory with frozen-model skill indices and embeddings."""
    sequences: Dict[int, List[PolicySequence]] = {}
    for task_id in dataset.tasks:
        sequences[task_id] = [
            preprocess_trajectory(traj, model, idx) for idx, traj in enumerate(dataset.for_task(task_id))
        ]
    store = PolicyStore(horizon=model.horizon, sequences=sequences)
    LOGGER.info(
        "Preprocessed %d trajectories into %d decision points",
        len(store),
        sum(len(seq) for seq in store),
    )
    return store


# ----------------------------------------------------------------------
def policy_cache_key(dataset_hash: str, skill_hash: str, horizon: int) -> str:
    return hashlib.sha256(f"{dataset_hash}:{skill_hash}:{horizon}".encode("utf-8")).hexdigest()[:16]


def save_policy_store(store: PolicyStore, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    items = list(store)
    lengths = np.array([len(seq) for seq in items], dtype=np.int64)

    def cat(name: str, empty_shape: tuple) -> np.ndarray:
        if not items:
            return np.zeros(empty_shape)
        return np.concatenate([getattr(seq, name) for seq in items])

    latent = items[0].embeddings.shape[1] if items else 0
    state_dim = items[0].states.shape[1] if items else 0
    arrays = {
        "__format_version__": np.array([CACHE_VERSION], dtype=np.int64),
        "horizon": np.array([store.horizon], dtype=np.int64),
        "lengths": lengths,
        "task_ids": np.array([seq.task_id for seq in items], dtype=np.int64),
        "trajectories": np.array([seq.trajectory for seq in items], dtype=np.int64),
        "total_returns": np.array([seq.total_return for seq in items], dtype=np.float64),
        "rtg": cat("rtg", (0,)),
        "states": cat("states", (0, state_dim)),
        "embeddings": cat("embeddings", (0, latent)),
        "targets": cat("targets", (0,)).astype(np.int64),
        "valid": cat("valid", (0,)).astype(bool),
    }
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as handle:
        np.savez(handle, **arrays)
    tmp.replace(path)
    return path


def load_policy_store(path: Path | str) -> Optional[PolicyStore]:
    """Cached store, or ``None`` when the file is absent or stale."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        with np.load(path, allow_pickle=False) as archive:
            if int(archive["__format_version__"][0]) != CACHE_VERSION:
                LOGGER.warning("Ignoring policy cache %s with an old format", path)
                return None
            data = {name: archive[name] for name in archive.files}
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        raise DatasetFormatError(f"unreadable policy cache {path}: {exc}") from exc
    sequences: Dict[int, List[PolicySequence]] = {}
    offset = 0
    for i, length in enumerate(data["lengths"].tolist()):
        window = slice(offset, offset + length)
        offset += length
        seq = PolicySequence(
            task_id=int(data["task_ids"][i]),
            trajectory=int(data["trajectories"][i]),
            rtg=data["rtg"][window].copy(),
            states=data["states"][window].copy(),
            embeddings=data["embeddings"][window].copy(),
            targets=data["targets"][window].copy(),
            valid=data["valid"][window].copy(),
            total_return=float(data["total_returns"][i]),
        )
        sequences.setdefault(seq.task_id, []).append(seq)
    return PolicyStore(horizon=int(data["horizon"][0]), sequences=sequences)


__all__ = [
    "PolicySequence",
    "PolicyStore",
    "decision_points",
    "preprocess_trajectory",
    "preprocess_policy_dataset",
    "policy_cache_key",
    "save_policy_store",
    "load_policy_store",
]
