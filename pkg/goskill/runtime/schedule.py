"""Enhancement and policy-learning loops, sequential or on a thread pool."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from goskill.config.settings import RunConfig
from goskill.policy.preprocessing import PolicyStore
from goskill.policy.prompts import PromptTriples, select_prompt
from goskill.policy.trainer import PolicyTrainer, sample_policy_batch
from goskill.skills.classes import SkillEnhancer

LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class PhaseResult:
    name: str
    iterations: int
    losses: List[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


def _run_loop(name: str, iterations: int, step: Callable[[], float], log_interval: int) -> PhaseResult:
    result = PhaseResult(name=name, iterations=iterations)
    started = time.perf_counter()
    LOGGER.info("Phase %s: %d iterations", name, iterations)
    for i in range(1, iterations + 1):
        result.losses.append(step())
        if i % log_interval == 0:
            LOGGER.info("Phase %s step %d/%d: loss %.5f", name, i, iterations, result.losses[-1])
    result.seconds = time.perf_counter() - started
    LOGGER.info("Phase %s finished in %.1fs", name, result.seconds)
    return result


def build_prompts(store: PolicyStore, tasks: Sequence[int], seed: int, prompt_length: int) -> Dict[int, PromptTriples]:
    return {task: select_prompt(task, store, seed, prompt_length) for task in tasks}


def run_enhancement(enhancer: SkillEnhancer, iterations: int, log_interval: int = 100) -> PhaseResult:
    return _run_loop("enhancement", iterations, enhancer.enhancement_step, log_interval)


def run_policy_learning(
    trainer: PolicyTrainer,
    store: PolicyStore,
    prompts: Dict[int, PromptTriples],
    config: RunConfig,
    iterations: int,
    seed: int,
    tasks: Optional[Sequence[int]] = None,
) -> PhaseResult:
    rng = np.random.default_rng([seed, 29])
    tasks = list(tasks) if tasks is not None else [t for t in store.tasks if t in prompts]

    def step() -> float:
        batch = sample_policy_batch(
            store, prompts, config.policy.batch_per_task, config.policy.context_length, rng, tasks
        )
        return trainer.policy_train_step(batch)

    return _run_loop("policy", iterations, step, config.schedule.log_interval)


def co_train(
    enhancer: Optional[SkillEnhancer],
    trainer: PolicyTrainer,
    store: PolicyStore,
    prompts: Dict[int, PromptTriples],
    config: RunConfig,
    enhancement_iters: int,
    policy_iters: int,
    seed: int,
    tasks: Optional[Sequence[int]] = None,
    parallel: bool = False,
) -> Dict[str, PhaseResult]:
    """Decoder enhancement and policy learning; both read only frozen encoder/codebook state."""
    log_interval = config.schedule.log_interval

    def enhance() -> PhaseResult:
        if enhancer is None:
            return PhaseResult(name="enhancement", iterations=0)
        return run_enhancement(enhancer, enhancement_iters, log_interval)

    def learn() -> PhaseResult:
        return run_policy_learning(trainer, store, prompts, config, policy_iters, seed, tasks)

    if not parallel:
        return {"enhancement": enhance(), "policy": learn()}
    with ThreadPoolExecutor(max_workers=2, thread_name_prefix="goskill") as pool:
        enhancement = pool.submit(enhance)
        policy = pool.submit(learn)
        return {"enhancement": enhancement.result(), "policy": policy.result()}


__all__ = ["PhaseResult", "build_prompts", "run_enhancement", "run_policy_learning", "co_train"]
