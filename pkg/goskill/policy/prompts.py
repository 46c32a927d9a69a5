"""Task prompts taken from the best stored demonstration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from goskill.errors import DataError

from .preprocessing import PolicySequence, PolicyStore


@dataclass(slots=True)
class PromptTriples:
    """``K*`` (return-to-go, state, skill embedding) triples, right-padded with ``mask``."""

    task_id: int
    rtg: np.ndarray
    states: np.ndarray
    embeddings: np.ndarray
    mask: np.ndarray
    source: int = 0

    @property
    def max_return(self) -> float:
        return float(self.rtg[0])

    def __len__(self) -> int:
        return int(self.mask.sum())


def best_demonstration(task_id: int, store: PolicyStore, seed: int = 0) -> PolicySequence:
    candidates = store.for_task(task_id)
    if not candidates:
        raise DataError(f"task {task_id} has no demonstrations to build a prompt from")
    returns = np.array([seq.rtg[0] for seq in candidates])
    best = np.flatnonzero(returns == returns.max())
    if len(best) == 1:
        return candidates[int(best[0])]
    return candidates[int(np.random.default_rng([seed, task_id]).choice(best))]


def select_prompt(task_id: int, store: PolicyStore, seed: int = 0, prompt_length: int = 10) -> PromptTriples:
    demo = best_demonstration(task_id, store, seed)
    count = min(prompt_length, len(demo))
    mask = np.zeros(prompt_length, dtype=bool)
    mask[:count] = True

    def pad(values: np.ndarray) -> np.ndarray:
        out = np.zeros((prompt_length, *values.shape[1:]))
        out[:count] = values[:count]
        return out

    return PromptTriples(
        task_id=task_id,
        rtg=pad(demo.rtg),
        states=pad(demo.states),
        embeddings=pad(demo.embeddings),
        mask=mask,
        source=demo.trajectory,
    )


__all__ = ["PromptTriples", "best_demonstration", "select_prompt"]
