"""Configuration exports."""
from .settings import (
    ABLATION_PRESETS,
    FULL_BUDGET,
    AblationConfig,
    RunConfig,
    Settings,
    build_run_config,
    load_run_config,
)

__all__ = [
    "ABLATION_PRESETS",
    "FULL_BUDGET",
    "AblationConfig",
    "RunConfig",
    "Settings",
    "build_run_config",
    "load_run_config",
]
