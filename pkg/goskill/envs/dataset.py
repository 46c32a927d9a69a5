"""Offline trajectory datasets: generation, presets and the on-disk format.

Directory layout::

    <dir>/manifest.txt     header ``key=value`` lines, then one
                           ``task_id count quality_fractions seed`` line per task
    <dir>/task_<id>.bin    little-endian binary records for one task

A record is ``length:u32 episode_seed:u64 quality:u8 success:u8`` followed by
``(length + 1) * state_dim`` state floats, ``length * action_dim`` action
floats and ``length`` reward floats, all ``<f8``.
"""
from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from goskill.config.settings import DataConfig, EnvConfig
from goskill.errors import ConfigError, DataError, DatasetFormatError, DatasetIOError

from .controllers import GENERATION_ORDER, build_controller
from .point_nav import ACTION_DIM, STATE_DIM, PointNavSuite, get_task

LOGGER = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"GSKT"
PRESETS = ("near-optimal", "sub-optimal")
QUALITIES = ("expert", "medium", "random")
_QUALITY_CODE = {name: code for code, name in enumerate(QUALITIES)}
_FILE_HEADER = struct.Struct("<4sIiIII")
_RECORD_HEADER = struct.Struct("<IQBB")


@dataclass(slots=True)
class Trajectory:
    task_id: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    episode_seed: int = 0
    quality: str = "expert"
    success: bool = False

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(-1, ACTION_DIM)
        self.rewards = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        if not (len(self.actions) == len(self.rewards) == len(self.states) - 1):
            raise DatasetFormatError(
                f"trajectory lengths disagree: {len(self.states)} states, "
                f"{len(self.actions)} actions, {len(self.rewards)} rewards"
            )

    @property
    def length(self) -> int:
        return int(len(self.actions))

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())

    def returns_to_go(self) -> np.ndarray:
        return return_to_go(self)


def return_to_go(traj: Trajectory | Sequence[float] | np.ndarray) -> np.ndarray:
    """Suffix sums of rewards: ``r_hat[t] = sum(rewards[t:])``."""
    rewards = traj.rewards if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    return np.cumsum(rewards[::-1])[::-1].copy()


@dataclass(slots=True)
class DatasetManifest:
    preset: str = "near-optimal"
    quality_mix: Tuple[float, float, float] = (0.4, 0.3, 0.3)
    seed: int = 0
    counts: Dict[int, int] = field(default_factory=dict)
    fractions: Dict[int, Tuple[float, float, float]] = field(default_factory=dict)
    version: int = FORMAT_VERSION
    state_dim: int = STATE_DIM
    action_dim: int = ACTION_DIM

    def to_text(self) -> str:
        lines = [
            "# goskill offline dataset",
            f"version={self.version}",
            f"preset={self.preset}",
            f"quality_mix={_fmt_fractions(self.quality_mix)}",
            f"seed={self.seed}",
            f"state_dim={self.state_dim}",
            f"action_dim={self.action_dim}",
            "# task_id count quality_fractions seed",
        ]
        for task_id in sorted(self.counts):
            fractions = self.fractions.get(task_id, (0.0, 0.0, 0.0))
            lines.append(f"{task_id} {self.counts[task_id]} {_fmt_fractions(fractions)} {self.seed}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        header: Dict[str, str] = {}
        counts: Dict[int, int] = {}
        fractions: Dict[int, Tuple[float, float, float]] = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line:
                key, value = line.split("=", 1)
                header[key.strip()] = value.strip()
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DatasetFormatError(f"malformed manifest line: {raw!r}")
            try:
                task_id, count = int(parts[0]), int(parts[1])
                fractions[task_id] = _parse_fractions(parts[2])
            except ValueError as exc:
                raise DatasetFormatError(f"malformed manifest line: {raw!r}") from exc
            counts[task_id] = count
        try:
            version = int(header["version"])
            manifest = cls(
                preset=header.get("preset", "near-optimal"),
                quality_mix=_parse_fractions(header.get("quality_mix", "0.4,0.3,0.3")),
                seed=int(header.get("seed", "0")),
                counts=counts,
                fractions=fractions,
                version=version,
                state_dim=int(header.get("state_dim", STATE_DIM)),
                action_dim=int(header.get("action_dim", ACTION_DIM)),
            )
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"manifest header is incomplete: {exc}") from exc
        if manifest.version != FORMAT_VERSION:
            raise DatasetFormatError(
                f"dataset format version {manifest.version} is not supported (expected {FORMAT_VERSION})"
            )
        return manifest


def _fmt_fractions(values: Sequence[float]) -> str:
    return ",".join(f"{float(v):.6g}" for v in values)


def _parse_fractions(text: str) -> Tuple[float, float, float]:
    values = tuple(float(v) for v in text.split(","))
    if len(values) != 3:
        raise ValueError(f"expected three quality fractions, got {text!r}")
    return values  # type: ignore[return-value]


@dataclass(slots=True)
class OfflineDataset:
    manifest: DatasetManifest
    trajectories: Dict[int, List[Trajectory]]

    @property
    def tasks(self) -> List[int]:
        return sorted(self.trajectories)

    def __len__(self) -> int:
        return sum(len(items) for items in self.trajectories.values())

    def __iter__(self) -> Iterator[Trajectory]:
        for task_id in self.tasks:
            yield from self.trajectories[task_id]

    def for_task(self, task_id: int) -> List[Trajectory]:
        return self.trajectories.get(task_id, [])

    def subset(self, tasks: Sequence[int]) -> "OfflineDataset":
        missing = [t for t in tasks if t not in self.trajectories]
        if missing:
            raise DataError(f"dataset has no trajectories for tasks {missing}")
        kept = {t: self.trajectories[t] for t in tasks}
        manifest = DatasetManifest(
            preset=self.manifest.preset,
            quality_mix=self.manifest.quality_mix,
            seed=self.manifest.seed,
            counts={t: len(kept[t]) for t in kept},
            fractions={t: self.manifest.fractions.get(t, _observed_fractions(kept[t])) for t in kept},
        )
        return OfflineDataset(manifest=manifest, trajectories=kept)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for traj in self:
            digest.update(struct.pack("<iQ", traj.task_id, traj.episode_seed))
            for array in (traj.states, traj.actions, traj.rewards):
                digest.update(np.ascontiguousarray(array, dtype="<f8").tobytes())
        return digest.hexdigest()


# ----------------------------------------------------------------------
def quality_counts(quality_mix: Sequence[float], episodes: int) -> Dict[str, int]:
    """Split ``episodes`` across qualities by the largest-remainder rule."""
    if len(quality_mix) != 3 or any(f < 0 for f in quality_mix) or abs(sum(quality_mix) - 1.0) > 1e-9:
        raise ConfigError(f"quality fractions must be three non-negative values summing to 1, got {quality_mix}")
    raw = [f * episodes for f in quality_mix]
    counts = [math.floor(v) for v in raw]
    leftover = episodes - sum(counts)
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return dict(zip(QUALITIES, counts))


def episode_seed(seed: int, task_id: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, task_id, index]).generate_state(1)[0])


def run_episode(suite: PointNavSuite, controller, task_id: int, seed: int) -> Trajectory:
    rng = np.random.default_rng([seed, 1])
    state = suite.reset(task_id, seed)
    limit = controller.episode_limit(rng)
    states = [state.observation.copy()]
    actions: List[np.ndarray] = []
    rewards: List[float] = []
    done = False
    while not done and len(actions) < limit:
        action = controller.act(state, rng)
        state, reward, done = suite.step(state, action)
        states.append(state.observation.copy())
        actions.append(np.clip(action, -1.0, 1.0))
        rewards.append(reward)
    return Trajectory(
        task_id=task_id,
        states=np.stack(states),
        actions=np.array(actions).reshape(-1, ACTION_DIM),
        rewards=np.array(rewards),
        episode_seed=seed,
        quality=controller.quality,
        success=state.success,
    )


def collect_dataset(
    tasks: Sequence[int],
    quality_mix: Sequence[float],
    episodes_per_task: int,
    seed: int,
    out_dir: Optional[Path | str] = None,
    preset: str = "near-optimal",
    env_config: Optional[EnvConfig] = None,
    medium_noise: float = 0.3,
    medium_truncation: float = 0.3,
) -> OfflineDataset:
    """Generate trajectories per task in random, medium, expert order."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown dataset preset '{preset}', expected one of {list(PRESETS)}")
    if episodes_per_task < 0:
        raise ConfigError("episodes_per_task must be non-negative")
    counts = quality_counts(quality_mix, episodes_per_task)
    suite = PointNavSuite(env_config)
    trajectories: Dict[int, List[Trajectory]] = {}
    for task_id in tasks:
        get_task(task_id)
        items: List[Trajectory] = []
        for quality in GENERATION_ORDER:
            controller = build_controller(quality, suite, noise=medium_noise, truncation=medium_truncation)
            for _ in range(counts[quality]):
                items.append(run_episode(suite, controller, task_id, episode_seed(seed, task_id, len(items))))
        if preset == "sub-optimal":
            items = items[: math.ceil(len(items) / 2)]
        trajectories[int(task_id)] = items
        LOGGER.debug("Task %d: %d trajectories, %d successful", task_id, len(items), sum(t.success for t in items))
    manifest = DatasetManifest(
        preset=preset,
        quality_mix=tuple(float(f) for f in quality_mix),  # type: ignore[arg-type]
        seed=seed,
        counts={t: len(items) for t, items in trajectories.items()},
        fractions={t: _observed_fractions(items) for t, items in trajectories.items()},
    )
    dataset = OfflineDataset(manifest=manifest, trajectories=trajectories)
    if out_dir is not None:
        save_dataset(dataset, out_dir)
    return dataset


def collect_from_config(data: DataConfig, env: EnvConfig, tasks: Sequence[int], out_dir=None) -> OfflineDataset:
    return collect_dataset(
        tasks,
        data.quality_mix,
        data.episodes_per_task,
        data.seed,
        out_dir=out_dir,
        preset=data.preset,
        env_config=env,
        medium_noise=data.medium_noise,
        medium_truncation=data.medium_truncation,
    )


def _observed_fractions(items: Sequence[Trajectory]) -> Tuple[float, float, float]:
    if not items:
        return (0.0, 0.0, 0.0)
    total = len(items)
    return tuple(sum(t.quality == q for t in items) / total for q in QUALITIES)  # type: ignore[return-value]


# ----------------------------------------------------------------------
def save_dataset(dataset: OfflineDataset, path: Path | str) -> DatasetManifest:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        for task_id, items in dataset.trajectories.items():
            payload = bytearray(
                _FILE_HEADER.pack(MAGIC, FORMAT_VERSION, task_id, len(items), STATE_DIM, ACTION_DIM)
            )
            for traj in items:
                payload += _RECORD_HEADER.pack(
                    traj.length, traj.episode_seed, _QUALITY_CODE[traj.quality], int(traj.success)
                )
                for array in (traj.states, traj.actions, traj.rewards):
                    payload += np.ascontiguousarray(array, dtype="<f8").tobytes()
            _atomic_write(path / f"task_{task_id}.bin", bytes(payload))
        _atomic_write(path / "manifest.txt", dataset.manifest.to_text().encode("utf-8"))
    except OSError as exc:
        raise DatasetIOError(f"could not write dataset to {path}: {exc}") from exc
    LOGGER.info("Saved %d trajectories over %d tasks to %s", len(dataset), len(dataset.tasks), path)
    return dataset.manifest


def _atomic_write(target: Path, payload: bytes) -> None:
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(target)


def load_dataset(path: Path | str) -> OfflineDataset:
    """Read a dataset directory; nothing is returned unless every file parses."""
    path = Path(path)
    manifest_path = path / "manifest.txt"
    if not manifest_path.exists():
        raise DataError(f"no dataset manifest at {manifest_path}")
    manifest = DatasetManifest.from_text(manifest_path.read_text(encoding="utf-8"))
    trajectories: Dict[int, List[Trajectory]] = {}
    for task_id, count in manifest.counts.items():
        file_path = path / f"task_{task_id}.bin"
        try:
            blob = file_path.read_bytes()
        except OSError as exc:
            raise DatasetIOError(f"could not read {file_path}: {exc}") from exc
        items = _parse_task_file(blob, file_path)
        if len(items) != count or any(t.task_id != task_id for t in items):
            raise DatasetFormatError(
                f"{file_path} holds {len(items)} records for task {task_id}, manifest says {count}"
            )
        trajectories[task_id] = items
    return OfflineDataset(manifest=manifest, trajectories=trajectories)


def _parse_task_file(blob: bytes, file_path: Path) -> List[Trajectory]:
    if len(blob) < _FILE_HEADER.size:
        raise DatasetIOError(f"{file_path} is truncated (no header)")
    magic, version, task_id, count, state_dim, action_dim = _FILE_HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{file_path} is not a goskill dataset file")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{file_path} has format version {version}, expected {FORMAT_VERSION}")
    offset = _FILE_HEADER.size
    items: List[Trajectory] = []
    for _ in range(count):
        if offset + _RECORD_HEADER.size > len(blob):
            raise DatasetIOError(f"{file_path} is truncated at record {len(items)}")
        length, seed, quality, success = _RECORD_HEADER.unpack_from(blob, offset)
        offset += _RECORD_HEADER.size
        if quality >= len(QUALITIES):
            raise DatasetFormatError(f"{file_path}: unknown quality code {quality}")
        sizes = ((length + 1) * state_dim, length * action_dim, length)
        arrays = []
        for size in sizes:
            end = offset + 8 * size
            if end > len(blob):
                raise DatasetIOError(f"{file_path} is truncated at record {len(items)}")
            arrays.append(np.frombuffer(blob, dtype="<f8", count=size, offset=offset).astype(np.float64))
            offset = end
        items.append(
            Trajectory(
                task_id=task_id,
                states=arrays[0].reshape(length + 1, state_dim),
                actions=arrays[1].reshape(length, action_dim),
                rewards=arrays[2],
                episode_seed=seed,
                quality=QUALITIES[quality],
                success=bool(success),
            )
        )
    if offset != len(blob):
        raise DatasetFormatError(f"{file_path} has {len(blob) - offset} trailing bytes")
    return items


def replay_states(suite: PointNavSuite, traj: Trajectory) -> np.ndarray:
    """Re-run the stored actions from the episode seed and return the visited states."""
    state = suite.reset(traj.task_id, traj.episode_seed)
    states = [state.observation.copy()]
    for action in traj.actions:
        state, _, _ = suite.step(state, action)
        states.append(state.observation.copy())
    return np.stack(states)


__all__ = [
    "FORMAT_VERSION",
    "PRESETS",
    "QUALITIES",
    "Trajectory",
    "DatasetManifest",
    "OfflineDataset",
    "return_to_go",
    "quality_counts",
    "episode_seed",
    "run_episode",
    "collect_dataset",
    "collect_from_config",
    "save_dataset",
    "load_dataset",
    "replay_states",
]
