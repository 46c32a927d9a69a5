"""Evaluation protocol and report serialisation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from goskill.envs.dataset import episode_seed
from goskill.envs.point_nav import PointNavSuite

from .rollout import BaseAgent, EpisodeLog, run_episodes

LOGGER = logging.getLogger(__name__)

REPORT_FILES = ("per_task.csv", "per_seed.csv", "aggregate.csv", "skill_usage.csv", "summary.txt")


@dataclass(slots=True)
class EpisodeResult:
    task_id: int
    seed_group: int
    episode: int
    seed: int
    total_return: float
    success: bool
    steps: int
    error: Optional[str] = None


@dataclass(slots=True)
class TaskSummary:
    task_id: int
    return_mean: float
    return_std: float
    success_mean: float
    success_std: float
    episodes: int


@dataclass
class EvalReport:
    """Per-episode results plus the statistics derived from them.

    Standard deviations are taken over seed groups (population std), the
    aggregate is the mean of per-task means.
    """

    method: str
    tasks: List[int]
    seed_groups: int
    results: List[EpisodeResult]
    skill_usage: np.ndarray
    logs: Dict[int, List[EpisodeLog]] = field(default_factory=dict, repr=False)

    def _task_results(self, task_id: int) -> List[EpisodeResult]:
        return [r for r in self.results if r.task_id == task_id]

    def per_seed(self) -> List[Dict[str, float]]:
        rows = []
        for task_id in self.tasks:
            results = self._task_results(task_id)
            for group in range(self.seed_groups):
                chunk = [r for r in results if r.seed_group == group]
                if not chunk:
                    continue
                rows.append(
                    {
                        "task_id": task_id,
                        "seed_group": group,
                        "return_mean": float(np.mean([r.total_return for r in chunk])),
                        "success_rate": float(np.mean([r.success for r in chunk])),
                    }
                )
        return rows

    def per_task(self) -> List[TaskSummary]:
        seeds = self.per_seed()
        summaries = []
        for task_id in self.tasks:
            rows = [row for row in seeds if row["task_id"] == task_id]
            returns = np.array([row["return_mean"] for row in rows])
            success = np.array([row["success_rate"] for row in rows])
            summaries.append(
                TaskSummary(
                    task_id=task_id,
                    return_mean=float(returns.mean()) if len(rows) else 0.0,
                    return_std=float(returns.std()) if len(rows) else 0.0,
                    success_mean=float(success.mean()) if len(rows) else 0.0,
                    success_std=float(success.std()) if len(rows) else 0.0,
                    episodes=len(self._task_results(task_id)),
                )
            )
        return summaries

    def aggregate(self) -> Dict[str, float]:
        summaries = self.per_task()
        seeds = self.per_seed()
        group_returns = []
        group_success = []
        for group in range(self.seed_groups):
            rows = [row for row in seeds if row["seed_group"] == group]
            if rows:
                group_returns.append(np.mean([row["return_mean"] for row in rows]))
                group_success.append(np.mean([row["success_rate"] for row in rows]))
        return {
            "return_mean": float(np.mean([s.return_mean for s in summaries])) if summaries else 0.0,
            "return_std": float(np.std(group_returns)) if group_returns else 0.0,
            "success_mean": float(np.mean([s.success_mean for s in summaries])) if summaries else 0.0,
            "success_std": float(np.std(group_success)) if group_success else 0.0,
        }

    def metrics(self) -> Dict[str, object]:
        """Summary block stored in run manifests."""
        return {
            "method": self.method,
            "aggregate": self.aggregate(),
            "per_task": {
                str(s.task_id): {"return_mean": s.return_mean, "success_mean": s.success_mean}
                for s in self.per_task()
            },
            "errors": sum(1 for r in self.results if r.error),
        }

    def summary_text(self) -> str:
        agg = self.aggregate()
        lines = [
            f"method: {self.method}",
            f"episodes: {len(self.results)} ({self.seed_groups} seed groups)",
            f"aggregate return: {agg['return_mean']:.3f} +/- {agg['return_std']:.3f}",
            f"aggregate success rate: {agg['success_mean']:.3f} +/- {agg['success_std']:.3f}",
            "",
            "task  return_mean  return_std  success_rate  success_std",
        ]
        for s in self.per_task():
            lines.append(
                f"{s.task_id:>4}  {s.return_mean:11.3f}  {s.return_std:10.3f}  {s.success_mean:12.3f}  {s.success_std:11.3f}"
            )
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path | str) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "per_task.csv").open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["method", "task_id", "return_mean", "return_std", "success_rate_mean", "success_rate_std", "episodes"])
            for s in self.per_task():
                writer.writerow([self.method, s.task_id, s.return_mean, s.return_std, s.success_mean, s.success_std, s.episodes])
        with (out_dir / "per_seed.csv").open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["method", "task_id", "seed_group", "return_mean", "success_rate"])
            for row in self.per_seed():
                writer.writerow([self.method, row["task_id"], row["seed_group"], row["return_mean"], row["success_rate"]])
        with (out_dir / "aggregate.csv").open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["method", "metric", "mean", "std"])
            agg = self.aggregate()
            writer.writerow([self.method, "return", agg["return_mean"], agg["return_std"]])
            writer.writerow([self.method, "success_rate", agg["success_mean"], agg["success_std"]])
        with (out_dir / "skill_usage.csv").open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["task_id", *[f"skill_{k}" for k in range(self.skill_usage.shape[1])]])
            for task_id, row in zip(self.tasks, self.skill_usage):
                writer.writerow([task_id, *row.tolist()])
        (out_dir / "summary.txt").write_text(self.summary_text(), encoding="utf-8")
        return out_dir


def evaluation_seeds(base_seed: int, group: int, task_id: int, n_episodes: int) -> List[int]:
    return [episode_seed(base_seed + group, task_id, e) for e in range(n_episodes)]


def evaluate(
    agent: BaseAgent,
    suite: PointNavSuite,
    tasks: Sequence[int],
    n_episodes: int,
    n_seeds: int,
    base_seed: int = 1000,
    num_skills: int = 0,
    keep_logs: bool = False,
) -> EvalReport:
    """Run ``n_episodes`` per task for each of ``n_seeds`` seed groups."""
    results: List[EpisodeResult] = []
    usage = np.zeros((len(tasks), num_skills), dtype=np.int64)
    kept: Dict[int, List[EpisodeLog]] = {}
    for row, task_id in enumerate(tasks):
        for group in range(n_seeds):
            seeds = evaluation_seeds(base_seed, group, task_id, n_episodes)
            logs = run_episodes(agent, suite, task_id, seeds)
            for idx, log in enumerate(logs):
                results.append(
                    EpisodeResult(
                        task_id=task_id,
                        seed_group=group,
                        episode=idx,
                        seed=log.seed,
                        total_return=log.total_return,
                        success=log.success,
                        steps=log.steps,
                        error=log.error,
                    )
                )
                if num_skills:
                    for skill in log.skill_indices:
                        usage[row, skill] += 1
            if keep_logs:
                kept.setdefault(task_id, []).extend(logs)
        LOGGER.debug("Evaluated %s on task %d", agent.name, task_id)
    report = EvalReport(
        method=agent.name,
        tasks=list(tasks),
        seed_groups=n_seeds,
        results=results,
        skill_usage=usage,
        logs=kept,
    )
    agg = report.aggregate()
    LOGGER.info(
        "Evaluation of %s: return %.2f +/- %.2f, success %.3f",
        agent.name,
        agg["return_mean"],
        agg["return_std"],
        agg["success_mean"],
    )
    return report


__all__ = ["REPORT_FILES", "EpisodeResult", "TaskSummary", "EvalReport", "evaluation_seeds", "evaluate"]
