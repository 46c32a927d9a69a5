"""Run directories: layout, single-writer lock and config snapshots."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Optional

from tenacity import RetryError, retry, retry_if_exception_type, stop_after_attempt, wait_fixed

from goskill.config.settings import RunConfig
from goskill.errors import ConfigError, RunLockedError

LOGGER = logging.getLogger(__name__)

LOCK_NAME = ".lock"


def file_sha256(path: Path | str) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunDirectory:
    """``<run_root>/<run_id>/`` owned by one command at a time."""

    def __init__(self, run_root: Path | str, run_id: str, lock_attempts: int = 3, lock_wait: float = 0.5) -> None:
        self.root = Path(run_root)
        self.run_id = run_id
        self.path = self.root / run_id
        self._lock_attempts = lock_attempts
        self._lock_wait = lock_wait
        self._locked = False

    @property
    def checkpoints(self) -> Path:
        return self.path / "checkpoints"

    @property
    def reports(self) -> Path:
        return self.path / "reports"

    @property
    def cache(self) -> Path:
        return self.root / "cache"

    @property
    def lock_path(self) -> Path:
        return self.path / LOCK_NAME

    def _try_lock(self) -> None:
        fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(str(os.getpid()))

    def acquire(self) -> "RunDirectory":
        self.path.mkdir(parents=True, exist_ok=True)
        attempt = retry(
            retry=retry_if_exception_type(FileExistsError),
            stop=stop_after_attempt(self._lock_attempts),
            wait=wait_fixed(self._lock_wait),
        )(self._try_lock)
        try:
            attempt()
        except RetryError as exc:
            raise RunLockedError(f"run directory {self.path} is locked by another command") from exc
        self._locked = True
        LOGGER.debug("Acquired lock on %s", self.path)
        return self

    def release(self) -> None:
        if self._locked:
            self.lock_path.unlink(missing_ok=True)
            self._locked = False

    def __enter__(self) -> "RunDirectory":
        return self.acquire()

    def __exit__(self, *exc_info) -> None:
        self.release()

    def write_config(self, config: RunConfig) -> Path:
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "config.json").write_text(
            json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True), encoding="utf-8"
        )
        (self.path / "config.txt").write_text(config.to_key_value(), encoding="utf-8")
        return self.path / "config.json"

    def checkpoint(self, name: str) -> Path:
        self.checkpoints.mkdir(parents=True, exist_ok=True)
        return self.checkpoints / name


def find_run(run_root: Path | str, run_id: str) -> Optional[Path]:
    path = Path(run_root) / run_id
    return path if path.is_dir() else None


def resolve_run(run_root: Path | str, ref: Path | str) -> Path:
    """A run directory given either as a path or as a run id under ``run_root``."""
    path = Path(ref)
    if path.is_dir():
        return path
    found = find_run(run_root, str(ref))
    if found is None:
        raise ConfigError(f"no run directory {ref} (also looked under {run_root})")
    return found


__all__ = ["LOCK_NAME", "RunDirectory", "file_sha256", "find_run", "resolve_run"]
