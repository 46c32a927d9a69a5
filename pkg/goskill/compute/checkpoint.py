"""Flat parameter archives: path -> little-endian float64 array."""
from __future__ import annotations

import logging
import zipfile
from pathlib import Path
from typing import Dict

import numpy as np

from goskill.errors import ConfigError, DatasetFormatError

from .nn import Module, state_checksum

LOGGER = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_VERSION_KEY = "__format_version__"


def save_checkpoint(path: Path | str, state: Dict[str, np.ndarray] | Module) -> str:
    """Write ``state`` and return its checksum."""
    if isinstance(state, Module):
        state = state.state_dict()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: np.ascontiguousarray(value, dtype="<f8") for name, value in state.items()}
    arrays[_VERSION_KEY] = np.array([CHECKPOINT_VERSION], dtype="<i8")
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as handle:
        np.savez(handle, **arrays)
    tmp.replace(path)
    digest = state_checksum(state)
    LOGGER.debug("Saved checkpoint %s (%d arrays, sha256 %s)", path, len(state), digest[:12])
    return digest


def load_checkpoint(path: Path | str) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            if _VERSION_KEY not in archive.files:
                raise DatasetFormatError(f"{path} has no format version field")
            version = int(archive[_VERSION_KEY][0])
            if version != CHECKPOINT_VERSION:
                raise DatasetFormatError(
                    f"{path} has checkpoint version {version}, expected {CHECKPOINT_VERSION}"
                )
            return {
                name: archive[name].astype(np.float64)
                for name in archive.files
                if name != _VERSION_KEY
            }
    except (zipfile.BadZipFile, ValueError, OSError) as exc:
        raise DatasetFormatError(f"unreadable checkpoint {path}: {exc}") from exc


def load_into(module: Module, path: Path | str) -> str:
    state = load_checkpoint(path)
    module.load_state_dict(state)
    return module.checksum()


__all__ = ["CHECKPOINT_VERSION", "save_checkpoint", "load_checkpoint", "load_into"]
