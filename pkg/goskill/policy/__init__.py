"""Skill-token preprocessing and the prompt-conditioned skill policy."""
from .focal import FocalResult, focal_loss
from .network import PolicyBatch, SkillPolicy, policy_forward
from .preprocessing import (
    PolicySequence,
    PolicyStore,
    load_policy_store,
    policy_cache_key,
    preprocess_policy_dataset,
    save_policy_store,
)
from .prompts import PromptTriples, select_prompt
from .trainer import PolicyTrainer, assemble_batch, build_policy, policy_train_step, sample_policy_batch

__all__ = [
    "FocalResult",
    "focal_loss",
    "PolicyBatch",
    "SkillPolicy",
    "policy_forward",
    "PolicySequence",
    "PolicyStore",
    "load_policy_store",
    "policy_cache_key",
    "preprocess_policy_dataset",
    "save_policy_store",
    "PromptTriples",
    "select_prompt",
    "PolicyTrainer",
    "assemble_batch",
    "build_policy",
    "policy_train_step",
    "sample_policy_batch",
]
