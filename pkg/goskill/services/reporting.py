"""Cross-run tables and static figures."""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from goskill.config.settings import AblationConfig  # noqa: E402
from goskill.errors import GoSkillError  # noqa: E402

from .manifest import RunManifest  # noqa: E402

LOGGER = logging.getLogger(__name__)

# (method, task) -> per-seed-group values
SeedTable = Dict[Tuple[str, int], List[Tuple[float, float]]]


@dataclass
class ReportSummary:
    out_dir: Path
    methods: List[str] = field(default_factory=list)
    tasks: List[int] = field(default_factory=list)
    gaps: List[str] = field(default_factory=list)
    files: List[Path] = field(default_factory=list)


def method_label(manifest: RunManifest) -> str:
    if manifest.method != "goskill":
        label = manifest.method
    else:
        ablation = AblationConfig(**manifest.config.get("ablation", {}))
        label = "goskill" if ablation.label == "full" else f"goskill-{ablation.label}"
    if manifest.command == "finetune":
        label = f"{label}-finetuned"
    return label


def _per_seed_file(run_dir: Path, manifest: RunManifest) -> Path:
    if manifest.command == "finetune":
        return run_dir / "reports" / "finetuned" / "per_seed.csv"
    return run_dir / "reports" / "per_seed.csv"


def read_per_seed(path: Path) -> List[Dict[str, float]]:
    with path.open("r", newline="", encoding="utf-8") as handle:
        return [
            {
                "task_id": int(row["task_id"]),
                "seed_group": int(row["seed_group"]),
                "return_mean": float(row["return_mean"]),
                "success_rate": float(row["success_rate"]),
            }
            for row in csv.DictReader(handle)
        ]


def collect_runs(run_dirs: Sequence[Path | str]) -> Tuple[SeedTable, Dict[str, Dict[Tuple[str, int], Tuple[float, float]]], List[Path], List[str]]:
    """Per-seed values by (method, task), per-group aggregates and usage files; missing pieces become gaps."""
    table: SeedTable = defaultdict(list)
    groups: Dict[str, Dict[Tuple[str, int], List[Tuple[float, float]]]] = defaultdict(lambda: defaultdict(list))
    usage_files: List[Path] = []
    gaps: List[str] = []
    for run_dir in map(Path, run_dirs):
        try:
            manifest = RunManifest.load(run_dir)
        except GoSkillError as exc:
            gaps.append(f"{run_dir}: {exc}")
            continue
        if manifest.status.value != "completed":
            gaps.append(f"{run_dir}: run status is {manifest.status.value}")
        path = _per_seed_file(run_dir, manifest)
        if not path.exists():
            gaps.append(f"{run_dir}: missing {path.relative_to(run_dir)}")
            continue
        method = method_label(manifest)
        for row in read_per_seed(path):
            table[(method, row["task_id"])].append((row["return_mean"], row["success_rate"]))
            groups[method][(manifest.run_id, row["seed_group"])].append((row["return_mean"], row["success_rate"]))
        usage = run_dir / "reports" / "codebook_usage.csv"
        if usage.exists():
            usage_files.append(usage)
    aggregates = {
        method: {key: tuple(np.mean(values, axis=0)) for key, values in by_group.items()}
        for method, by_group in groups.items()
    }
    return table, aggregates, usage_files, gaps


def _stats(values: Sequence[Tuple[float, float]]) -> Tuple[float, float, float, float]:
    array = np.asarray(values, dtype=np.float64)
    return (
        float(array[:, 0].mean()),
        float(array[:, 0].std()),
        float(array[:, 1].mean()),
        float(array[:, 1].std()),
    )


def _bar_chart(
    path: Path,
    methods: List[str],
    tasks: List[int],
    means: np.ndarray,
    stds: np.ndarray,
    ylabel: str,
) -> Path:
    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(tasks) * max(1, len(methods)) / 2 + 3), 4))
    width = 0.8 / max(1, len(methods))
    x = np.arange(len(tasks))
    for i, method in enumerate(methods):
        ax.bar(x + i * width - 0.4 + width / 2, means[i], width, yerr=stds[i], capsize=3, label=method)
    ax.set_xticks(x)
    ax.set_xticklabels([str(t) for t in tasks])
    ax.set_xlabel("Task")
    ax.set_ylabel(ylabel)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _usage_heatmap(usage_csv: Path, out_path: Path) -> Optional[Path]:
    with usage_csv.open("r", newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if len(rows) < 2:
        return None
    header, body = rows[0], rows[1:]
    sources = ("dataset", "evaluation")
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, source in zip(axes, sources):
        selected = [row for row in body if row[0] == source]
        if not selected:
            ax.set_visible(False)
            continue
        matrix = np.array([[float(v) for v in row[2:]] for row in selected])
        totals = matrix.sum(axis=1, keepdims=True)
        frac = np.divide(matrix, totals, out=np.zeros_like(matrix), where=totals > 0)
        image = ax.imshow(frac, aspect="auto", cmap="viridis")
        ax.set_yticks(range(len(selected)))
        ax.set_yticklabels([row[1] for row in selected])
        ax.set_xticks(range(len(header) - 2))
        ax.set_xticklabels([h.replace("skill_", "") for h in header[2:]], fontsize="small")
        ax.set_xlabel("Skill index")
        ax.set_ylabel("Task")
        ax.set_title(f"{source} usage")
        fig.colorbar(image, ax=ax)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def cmd_report(run_dirs: Sequence[Path | str], out_dir: Path | str) -> ReportSummary:
    """Tables and figures comparing runs; runs without metrics are listed as gaps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table, aggregates, usage_files, gaps = collect_runs(run_dirs)
    summary = ReportSummary(out_dir=out_dir, gaps=gaps)
    summary.methods = sorted({method for method, _ in table})
    summary.tasks = sorted({task for _, task in table})

    per_task = out_dir / "summary_per_task.csv"
    with per_task.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["method", "task_id", "return_mean", "return_std", "success_rate_mean", "success_rate_std", "n_seeds"])
        for method in summary.methods:
            for task in summary.tasks:
                values = table.get((method, task))
                if not values:
                    gaps.append(f"{method}: no results for task {task}")
                    continue
                writer.writerow([method, task, *_stats(values), len(values)])
    summary.files.append(per_task)

    aggregate = out_dir / "summary_aggregate.csv"
    with aggregate.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["method", "return_mean", "return_std", "success_rate_mean", "success_rate_std", "n_seeds"])
        for method in summary.methods:
            values = list(aggregates.get(method, {}).values())
            if values:
                writer.writerow([method, *_stats(values), len(values)])
    summary.files.append(aggregate)

    if summary.methods and summary.tasks:
        shape = (len(summary.methods), len(summary.tasks))
        stats = {key: _stats(values) for key, values in table.items()}
        for column, name, ylabel in ((0, "returns.png", "Episode return"), (2, "success.png", "Success rate")):
            means, stds = np.zeros(shape), np.zeros(shape)
            for i, method in enumerate(summary.methods):
                for j, task in enumerate(summary.tasks):
                    if (method, task) in stats:
                        means[i, j] = stats[(method, task)][column]
                        stds[i, j] = stats[(method, task)][column + 1]
            summary.files.append(_bar_chart(out_dir / name, summary.methods, summary.tasks, means, stds, ylabel))

    for usage in usage_files:
        figure = _usage_heatmap(usage, out_dir / f"skill_usage_{usage.parent.parent.name}.png")
        if figure is not None:
            summary.files.append(figure)

    gaps_path = out_dir / "gaps.txt"
    gaps_path.write_text("".join(f"{gap}\n" for gap in gaps), encoding="utf-8")
    summary.files.append(gaps_path)
    if gaps:
        LOGGER.warning("Report has %d gaps; see %s", len(gaps), gaps_path)
    LOGGER.info("Report for %d methods over %d tasks written to %s", len(summary.methods), len(summary.tasks), out_dir)
    return summary


__all__ = ["ReportSummary", "method_label", "read_per_seed", "collect_runs", "cmd_report"]
