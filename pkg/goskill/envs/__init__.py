"""Multi-task point-navigation suite, scripted controllers and offline datasets."""
from .controllers import BaseController, ExpertController, MediumController, RandomController, build_controller
from .dataset import (
    DatasetManifest,
    OfflineDataset,
    Trajectory,
    collect_dataset,
    load_dataset,
    return_to_go,
    save_dataset,
)
from .point_nav import (
    ACTION_DIM,
    STATE_DIM,
    TASKS,
    BatchState,
    EnvState,
    PointNavSuite,
    Primitive,
    TaskSpec,
    env_reset,
    env_step,
    get_task,
)

__all__ = [
    "BaseController",
    "ExpertController",
    "MediumController",
    "RandomController",
    "build_controller",
    "DatasetManifest",
    "OfflineDataset",
    "Trajectory",
    "collect_dataset",
    "load_dataset",
    "return_to_go",
    "save_dataset",
    "ACTION_DIM",
    "STATE_DIM",
    "TASKS",
    "BatchState",
    "EnvState",
    "PointNavSuite",
    "Primitive",
    "TaskSpec",
    "env_reset",
    "env_step",
    "get_task",
]
