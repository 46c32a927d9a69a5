"""Hierarchical deployment, evaluation, the flat baseline and fine-tuning."""
from .agents import GoSkillAgent, ScriptedAgent, hierarchical_rollout
from .baseline import (
    FlatBaselineAgent,
    FlatPromptTransformer,
    build_flat_baseline,
    flat_baseline_train_and_eval,
    train_flat_baseline,
)
from .evaluation import EvalReport, evaluate
from .finetune import FinetuneResult, finetune, finetune_baseline
from .rollout import BaseAgent, Decision, EpisodeLog, run_episodes
from .schedule import PhaseResult, co_train

__all__ = [
    "GoSkillAgent",
    "ScriptedAgent",
    "hierarchical_rollout",
    "FlatBaselineAgent",
    "FlatPromptTransformer",
    "build_flat_baseline",
    "flat_baseline_train_and_eval",
    "train_flat_baseline",
    "EvalReport",
    "evaluate",
    "FinetuneResult",
    "finetune",
    "finetune_baseline",
    "BaseAgent",
    "Decision",
    "EpisodeLog",
    "run_episodes",
    "PhaseResult",
    "co_train",
]
