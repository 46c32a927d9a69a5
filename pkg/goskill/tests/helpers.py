"""Tiny configurations and a finite-difference gradient checker."""
from __future__ import annotations

from typing import Callable

import numpy as np

from goskill.config.settings import RunConfig, build_run_config
from goskill.envs.dataset import OfflineDataset
from goskill.skills.model import SkillExtractor, SkillModel, build_skill_model, sample_windows

TINY = {
    "seed": 0,
    "env": {"horizon": 30, "train_tasks": [0, 3], "heldout_tasks": [8]},
    "data": {"episodes_per_task": 6, "seed": 0},
    "skill": {
        "horizon": 4,
        "codebook_size": 4,
        "latent_dim": 8,
        "encoder_hidden": [16],
        "dead_code_steps": 50,
        "churn_interval": 2,
        "churn_probe": 8,
    },
    "network": {"n_layers": 1, "n_heads": 2, "width": 16, "dropout": 0.0},
    "optim": {"lr": 1e-3},
    "policy": {"context_length": 4, "prompt_length": 3, "batch_per_task": 2},
    "schedule": {
        "extraction_iters": 3,
        "enhancement_iters": 2,
        "policy_iters": 2,
        "batch_per_task": 2,
        "batch_per_class": 2,
        "log_interval": 1,
    },
    "evaluation": {"episodes": 2, "seeds": 2},
    "finetune": {"tasks": [8], "iterations": 2},
    "baseline": {"iterations": 2, "batch_per_task": 2, "context_length": 4, "prompt_length": 3},
}


def tiny_run_config(tmp_path=None, **overrides) -> RunConfig:
    data = {key: dict(value) if isinstance(value, dict) else value for key, value in TINY.items()}
    if tmp_path is not None:
        data["paths"] = {"run_root": str(tmp_path / "runs"), "dataset_dir": str(tmp_path / "data")}
    for section, values in overrides.items():
        if isinstance(values, dict):
            data.setdefault(section, {}).update(values)
        else:
            data[section] = values
    return build_run_config(data)


def extract_tiny_model(dataset: OfflineDataset, steps: int = 3) -> SkillModel:
    """A tiny model after a few extraction steps, frozen and in eval mode."""
    config = tiny_run_config()
    model = build_skill_model(config.skill, config.network, config.ablation, seed=0)
    extractor = SkillExtractor(model, config.optim, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(steps):
        extractor.extraction_step(sample_windows(dataset, model.horizon, 4, rng))
    model.freeze_extracted()
    model.eval()
    return model


def numeric_grad(fn: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        original = array[idx]
        array[idx] = original + h
        plus = fn()
        array[idx] = original - h
        minus = fn()
        array[idx] = original
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-5, atol: float = 1e-7) -> None:
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)
