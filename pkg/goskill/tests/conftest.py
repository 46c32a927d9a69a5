"""Shared fixtures built on the tiny configuration."""
from __future__ import annotations

import pytest

from goskill.config.settings import RunConfig
from goskill.envs.dataset import OfflineDataset, collect_from_config
from goskill.skills.model import SkillModel, build_skill_model

from .helpers import extract_tiny_model, tiny_run_config


@pytest.fixture
def tiny_config(tmp_path) -> RunConfig:
    return tiny_run_config(tmp_path)


@pytest.fixture(scope="session")
def tiny_dataset() -> OfflineDataset:
    config = tiny_run_config()
    return collect_from_config(config.data, config.env, config.env.train_tasks)


@pytest.fixture
def skill_model() -> SkillModel:
    config = tiny_run_config()
    return build_skill_model(config.skill, config.network, config.ablation, seed=0)


@pytest.fixture
def extracted_model(tiny_dataset) -> SkillModel:
    return extract_tiny_model(tiny_dataset)


def pytest_configure(config) -> None:
    config.addinivalue_line("markers", "slow: long overfitting checks and the end-to-end comparisons")
