"""Pydantic schemas for run manifests."""
from __future__ import annotations

import json
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field, ValidationError

from goskill.errors import DatasetFormatError

MANIFEST_NAME = "manifest.json"


class RunStatusEnum(str, Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class PhaseRecord(BaseModel):
    status: RunStatusEnum = RunStatusEnum.RUNNING
    seconds: float = 0.0
    iterations: int = 0
    final_loss: Optional[float] = None
    checkpoint: Optional[str] = None
    checksum: Optional[str] = None


class RunManifest(BaseModel):
    run_id: str
    command: str
    method: str = "goskill"
    status: RunStatusEnum = RunStatusEnum.RUNNING
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    config: Dict[str, Any] = Field(default_factory=dict)
    dataset_hash: Optional[str] = None
    phases: Dict[str, PhaseRecord] = Field(default_factory=dict)
    hashes: Dict[str, str] = Field(default_factory=dict)
    metrics: Dict[str, Any] = Field(default_factory=dict)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None

    def save(self, run_dir: Path | str) -> Path:
        path = Path(run_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, run_dir: Path | str) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        try:
            return cls.model_validate(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, ValidationError) as exc:
            raise DatasetFormatError(f"unreadable run manifest {path}: {exc}") from exc


__all__ = ["MANIFEST_NAME", "RunStatusEnum", "PhaseRecord", "RunManifest"]
