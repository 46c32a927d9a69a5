"""Adapt a pretrained run to new tasks with the goal encoder and codebook frozen."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

from goskill.config.settings import RunConfig
from goskill.envs.dataset import OfflineDataset
from goskill.envs.point_nav import PointNavSuite
from goskill.errors import ContractError, DataError
from goskill.policy.network import SkillPolicy
from goskill.policy.preprocessing import preprocess_policy_dataset
from goskill.policy.trainer import PolicyTrainer
from goskill.skills.classes import SkillEnhancer, assign_skill_classes
from goskill.skills.model import SkillModel

from .agents import GoSkillAgent
from .baseline import FlatBaselineAgent, FlatPromptTransformer, flat_prompt, train_flat_baseline
from .evaluation import EvalReport, evaluate
from .schedule import PhaseResult, build_prompts, co_train

LOGGER = logging.getLogger(__name__)


@dataclass
class FinetuneResult:
    zero_shot: EvalReport
    finetuned: EvalReport
    frozen_before: Optional[str] = None
    frozen_after: Optional[str] = None
    phases: Dict[str, PhaseResult] = field(default_factory=dict)

    def comparison_rows(self):
        """(task, zero-shot return, fine-tuned return, zero-shot success, fine-tuned success)."""
        before = {s.task_id: s for s in self.zero_shot.per_task()}
        after = {s.task_id: s for s in self.finetuned.per_task()}
        return [
            (task, before[task].return_mean, after[task].return_mean, before[task].success_mean, after[task].success_mean)
            for task in self.zero_shot.tasks
        ]

    def comparison_text(self) -> str:
        lines = ["task  zero_shot_return  finetuned_return  zero_shot_success  finetuned_success"]
        for task, r0, r1, s0, s1 in self.comparison_rows():
            lines.append(f"{task:>4}  {r0:16.3f}  {r1:16.3f}  {s0:17.3f}  {s1:17.3f}")
        return "\n".join(lines) + "\n"


def _evaluate(agent, config: RunConfig, tasks: Sequence[int], suite: PointNavSuite, num_skills: int) -> EvalReport:
    return evaluate(
        agent,
        suite,
        tasks,
        config.evaluation.episodes,
        config.evaluation.seeds,
        config.evaluation.seed,
        num_skills=num_skills,
    )


def finetune(
    skill_model: SkillModel,
    policy: SkillPolicy,
    new_dataset: OfflineDataset,
    config: RunConfig,
    iterations: Optional[int] = None,
    seed: Optional[int] = None,
    tasks: Optional[Sequence[int]] = None,
    suite: Optional[PointNavSuite] = None,
) -> FinetuneResult:
    """Zero-shot evaluation, then decoder enhancement and policy steps, then evaluation again."""
    seed = config.seed if seed is None else seed
    iterations = config.finetune.iterations if iterations is None else iterations
    tasks = list(tasks) if tasks is not None else new_dataset.tasks
    if not tasks:
        raise DataError("fine-tuning dataset contains no tasks")
    suite = suite or PointNavSuite(config.env)
    num_skills = skill_model.codebook.size

    skill_model.freeze_extracted()
    frozen_before = skill_model.frozen_checksum()
    store = preprocess_policy_dataset(new_dataset, skill_model)
    prompts = build_prompts(store, tasks, seed, config.policy.prompt_length)

    def agent() -> GoSkillAgent:
        return GoSkillAgent(
            skill_model, policy, store, config.policy.context_length, config.policy.prompt_length, seed
        )

    zero_shot = _evaluate(agent(), config, tasks, suite, num_skills)
    phases: Dict[str, PhaseResult] = {}
    if iterations == 0:
        finetuned = zero_shot
    else:
        classes = assign_skill_classes(new_dataset, skill_model)
        enhancer = SkillEnhancer(skill_model, classes, config.optim, seed, config.schedule.batch_per_class)
        trainer = PolicyTrainer(policy, config.policy, config.optim, config.ablation)
        phases = co_train(
            enhancer,
            trainer,
            store,
            prompts,
            config,
            iterations,
            iterations,
            seed,
            tasks,
            parallel=config.schedule.parallel,
        )
        finetuned = _evaluate(agent(), config, tasks, suite, num_skills)

    frozen_after = skill_model.frozen_checksum()
    if frozen_after != frozen_before:
        raise ContractError("goal encoder or codebook changed during fine-tuning")
    result = FinetuneResult(zero_shot, finetuned, frozen_before, frozen_after, phases)
    LOGGER.info("Fine-tuning summary:\n%s", result.comparison_text())
    return result


def finetune_baseline(
    model: FlatPromptTransformer,
    new_dataset: OfflineDataset,
    config: RunConfig,
    iterations: Optional[int] = None,
    seed: Optional[int] = None,
    tasks: Optional[Sequence[int]] = None,
    suite: Optional[PointNavSuite] = None,
) -> FinetuneResult:
    """Same protocol for the flat learner: every parameter is trainable."""
    seed = config.seed if seed is None else seed
    iterations = config.finetune.iterations if iterations is None else iterations
    tasks = list(tasks) if tasks is not None else new_dataset.tasks
    if not tasks:
        raise DataError("fine-tuning dataset contains no tasks")
    suite = suite or PointNavSuite(config.env)
    prompts = {task: flat_prompt(task, new_dataset, seed, config.baseline.prompt_length) for task in tasks}
    agent = FlatBaselineAgent(model, prompts, config.baseline.context_length)
    zero_shot = _evaluate(agent, config, tasks, suite, config.skill.codebook_size)
    if iterations == 0:
        return FinetuneResult(zero_shot, zero_shot)
    _, _, losses = train_flat_baseline(new_dataset, config, tasks, seed, iterations, model=model)
    finetuned = _evaluate(agent, config, tasks, suite, config.skill.codebook_size)
    phase = PhaseResult(name="baseline", iterations=iterations, losses=losses)
    return FinetuneResult(zero_shot, finetuned, phases={"baseline": phase})


__all__ = ["FinetuneResult", "finetune", "finetune_baseline"]
