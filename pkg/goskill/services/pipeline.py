"""Phase orchestration behind the CLI commands."""
from __future__ import annotations

import csv
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from goskill.compute import load_into, save_checkpoint
from goskill.config.settings import RunConfig, build_run_config, load_run_config
from goskill.envs.dataset import DatasetManifest, OfflineDataset, collect_from_config, load_dataset
from goskill.envs.point_nav import STATE_DIM, PointNavSuite
from goskill.errors import ConfigError, ContractError, DataError
from goskill.policy.network import SkillPolicy
from goskill.policy.preprocessing import (
    PolicyStore,
    load_policy_store,
    policy_cache_key,
    preprocess_policy_dataset,
    save_policy_store,
)
from goskill.policy.trainer import PolicyTrainer, build_policy
from goskill.runtime.agents import GoSkillAgent, ScriptedAgent
from goskill.runtime.baseline import FlatBaselineAgent, build_flat_baseline, train_flat_baseline
from goskill.runtime.evaluation import EvalReport, evaluate
from goskill.runtime.finetune import FinetuneResult, finetune, finetune_baseline
from goskill.runtime.schedule import PhaseResult, build_prompts, co_train
from goskill.skills.classes import SkillEnhancer, assign_skill_classes, codebook_usage_report
from goskill.skills.model import SkillExtractor, SkillModel, aligned_windows, build_skill_model, sample_windows, usage_summary

from .logger import attach_run_log, detach_run_log
from .manifest import PhaseRecord, RunManifest, RunStatusEnum
from .run_directory import RunDirectory, file_sha256, resolve_run

LOGGER = logging.getLogger(__name__)

SKILL_CHECKPOINT = "skill.npz"
POLICY_CHECKPOINT = "policy.npz"
BASELINE_CHECKPOINT = "baseline.npz"


def default_run_id(config: RunConfig, prefix: Optional[str] = None) -> str:
    return f"{prefix or config.ablation.label}-seed{config.seed}"


class PipelineRun:
    """Locks the run directory and keeps the manifest current as phases finish."""

    def __init__(self, config: RunConfig, run_id: str, command: str, method: str = "goskill") -> None:
        self.config = config
        self.directory = RunDirectory(config.paths.run_root, run_id)
        self.manifest = RunManifest(
            run_id=run_id,
            command=command,
            method=method,
            config=config.model_dump(mode="json"),
        )

    @property
    def path(self) -> Path:
        return self.directory.path

    def save(self) -> None:
        self.manifest.save(self.path)

    def __enter__(self) -> "PipelineRun":
        self.directory.acquire()
        self.directory.write_config(self.config)
        attach_run_log(self.path / "run.log")
        LOGGER.info("Run %s (%s) in %s", self.manifest.run_id, self.manifest.command, self.path)
        self.save()
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        try:
            if exc is None:
                self.manifest.status = RunStatusEnum.COMPLETED
            else:
                self.manifest.status = RunStatusEnum.FAILED
                self.manifest.error = f"{exc_type.__name__}: {exc}"
                LOGGER.error("Run %s failed: %s", self.manifest.run_id, self.manifest.error)
            self.save()
        finally:
            detach_run_log()
            self.directory.release()
        return False

    @contextmanager
    def phase(self, name: str, iterations: int = 0) -> Iterator[PhaseRecord]:
        record = PhaseRecord(iterations=iterations)
        self.manifest.phases[name] = record
        self.save()
        started = time.perf_counter()
        LOGGER.info("Phase %s started", name)
        try:
            yield record
        except BaseException:
            record.status = RunStatusEnum.FAILED
            record.seconds = time.perf_counter() - started
            raise
        record.status = RunStatusEnum.COMPLETED
        record.seconds = time.perf_counter() - started
        LOGGER.info("Phase %s completed in %.1fs", name, record.seconds)
        self.save()

    def save_checkpoint(self, record: PhaseRecord, name: str, module) -> str:
        checksum = save_checkpoint(self.directory.checkpoint(name), module)
        record.checkpoint = f"checkpoints/{name}"
        record.checksum = checksum
        return checksum


# ----------------------------------------------------------------------
def load_training_data(config: RunConfig, tasks: Sequence[int]) -> Tuple[OfflineDataset, List[int]]:
    dataset = load_dataset(config.paths.dataset_dir)
    present = [t for t in tasks if t in dataset.tasks]
    if not present:
        raise DataError(f"dataset {config.paths.dataset_dir} has none of the tasks {list(tasks)}")
    missing = sorted(set(tasks) - set(present))
    if missing:
        LOGGER.warning("Dataset has no trajectories for tasks %s; continuing without them", missing)
    return dataset.subset(present), present


def extract_skills(
    model: SkillModel,
    dataset: OfflineDataset,
    config: RunConfig,
    seed: int,
    iterations: int,
) -> Tuple[SkillExtractor, PhaseResult]:
    """Joint encoder, codebook and decoder training on uniform per-task windows."""
    horizon = model.horizon
    probe = aligned_windows(dataset, horizon, config.skill.churn_probe)
    extractor = SkillExtractor(model, config.optim, seed, probe)
    rng = np.random.default_rng([seed, 7])
    result = PhaseResult(name="extraction", iterations=iterations)
    started = time.perf_counter()
    for step in range(1, iterations + 1):
        batch = sample_windows(dataset, horizon, config.schedule.batch_per_task, rng)
        losses = extractor.extraction_step(batch)
        result.losses.append(losses.total)
        if step % config.schedule.log_interval == 0:
            LOGGER.info(
                "Phase extraction step %d/%d: total %.5f mse %.5f vq %.5f",
                step,
                iterations,
                losses.total,
                losses.mse,
                losses.vq,
            )
    result.seconds = time.perf_counter() - started
    return extractor, result


def skill_store_hash(model: SkillModel) -> str:
    return f"{model.frozen_checksum()}:vq={int(model.ablation.vq)}:ae={int(model.ablation.action_encoded)}"


def cached_policy_store(
    dataset: OfflineDataset,
    model: SkillModel,
    dataset_hash: str,
    cache_dir: Path,
) -> Tuple[PolicyStore, Path]:
    key = policy_cache_key(dataset_hash, skill_store_hash(model), model.horizon)
    path = Path(cache_dir) / f"policy_{key}.npz"
    store = load_policy_store(path)
    if store is None:
        store = preprocess_policy_dataset(dataset, model)
        save_policy_store(store, path)
        LOGGER.info("Cached policy dataset at %s", path)
    else:
        LOGGER.info("Reusing cached policy dataset %s", path)
    return store, path


def build_run_policy(config: RunConfig, seed: Optional[int] = None) -> SkillPolicy:
    return build_policy(
        state_dim=STATE_DIM,
        latent_dim=config.skill.latent_dim,
        num_skills=config.skill.codebook_size,
        policy=config.policy,
        network=config.network,
        ablation=config.ablation,
        env_horizon=config.env.horizon,
        skill_horizon=config.skill.horizon,
        seed=config.seed if seed is None else seed,
    )


def _evaluate_into(run: PipelineRun, agent, tasks: Sequence[int], out_dir: Path) -> EvalReport:
    config = run.config
    report = evaluate(
        agent,
        PointNavSuite(config.env),
        tasks,
        config.evaluation.episodes,
        config.evaluation.seeds,
        config.evaluation.seed,
        num_skills=config.skill.codebook_size,
    )
    report.write(out_dir)
    return report


# ----------------------------------------------------------------------
def cmd_collect(config: RunConfig, out_dir: Optional[Path | str] = None) -> DatasetManifest:
    """Generate the offline dataset for training and held-out tasks."""
    target = Path(out_dir or config.paths.dataset_dir)
    tasks = sorted(set(config.env.train_tasks) | set(config.env.heldout_tasks))
    dataset = collect_from_config(config.data, config.env, tasks, out_dir=target)
    LOGGER.info("Dataset written to %s\n%s", target, dataset.manifest.to_text().rstrip())
    return dataset.manifest


def cmd_run(config: RunConfig, run_id: Optional[str] = None) -> RunManifest:
    """Extraction, freeze, assignment, enhancement with policy learning, evaluation."""
    dataset, tasks = load_training_data(config, config.env.train_tasks)
    seed = config.seed
    schedule = config.schedule
    with PipelineRun(config, run_id or default_run_id(config), "run") as run:
        manifest = run.manifest
        manifest.dataset_hash = dataset.checksum()
        manifest.hashes["dataset"] = manifest.dataset_hash
        model = build_skill_model(config.skill, config.network, config.ablation, seed)

        with run.phase("extraction", schedule.extraction_iters) as record:
            extractor, result = extract_skills(model, dataset, config, seed, schedule.extraction_iters)
            record.final_loss = result.final_loss
            run.save_checkpoint(record, "skill_extracted.npz", model)

        with run.phase("assignment") as record:
            model.freeze_extracted()
            frozen = model.frozen_checksum()
            manifest.hashes["encoder_codebook"] = frozen
            classes = assign_skill_classes(dataset, model)
            path = classes.write_csv(run.path / "assignments.csv")
            record.checkpoint = path.name
            record.checksum = file_sha256(path)

        with run.phase("preprocess") as record:
            store, cache_path = cached_policy_store(dataset, model, manifest.dataset_hash, run.directory.cache)
            record.checkpoint = str(cache_path)

        with run.phase("enhancement_policy", schedule.enhancement_iters + schedule.policy_iters) as record:
            policy = build_run_policy(config)
            prompts = build_prompts(store, tasks, seed, config.policy.prompt_length)
            enhancer = None
            if schedule.enhancement_iters > 0:
                enhancer = SkillEnhancer(model, classes, config.optim, seed, schedule.batch_per_class)
            trainer = PolicyTrainer(policy, config.policy, config.optim, config.ablation)
            results = co_train(
                enhancer,
                trainer,
                store,
                prompts,
                config,
                schedule.enhancement_iters,
                schedule.policy_iters,
                seed,
                tasks,
                parallel=schedule.parallel,
            )
            record.final_loss = results["policy"].final_loss
            manifest.hashes["skill_checkpoint"] = run.save_checkpoint(record, SKILL_CHECKPOINT, model)
            manifest.hashes["policy_checkpoint"] = run.save_checkpoint(record, POLICY_CHECKPOINT, policy)
            manifest.diagnostics["final_losses"] = {
                "extraction": result.final_loss,
                "enhancement": results["enhancement"].final_loss,
                "policy": results["policy"].final_loss,
            }

        if model.frozen_checksum() != frozen:
            raise ContractError("goal encoder or codebook changed after extraction")

        with run.phase("evaluation") as record:
            agent = GoSkillAgent(model, policy, store, config.policy.context_length, config.policy.prompt_length, seed)
            report = _evaluate_into(run, agent, tasks, run.directory.reports)
            usage = codebook_usage_report(classes, report.skill_usage, tasks)
            usage.write_csv(run.directory.reports / "codebook_usage.csv")
            record.checkpoint = "reports"

        manifest.metrics = report.metrics()
        manifest.metrics["reused_cells"] = [list(cell) for cell in usage.reused_cells()]
        manifest.diagnostics.update(
            {
                "assignment_churn": [list(item) for item in extractor.churn],
                "reseeded_codes": extractor.reseeded,
                "focal_clamped": trainer.clamped,
                "empty_classes": model.codebook.size - len(classes.non_empty()),
                "codebook_usage": usage_summary(model)["usage"],
            }
        )
        return manifest


@dataclass
class LoadedRun:
    path: Path
    config: RunConfig
    manifest: Optional[RunManifest]
    model: SkillModel
    policy: SkillPolicy


def load_run(run_dir: Path | str) -> LoadedRun:
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise ConfigError(f"{run_dir} is not a run directory (no config.json)")
    config = load_run_config(config_path)
    checkpoints = run_dir / "checkpoints"
    for name in (SKILL_CHECKPOINT, POLICY_CHECKPOINT):
        if not (checkpoints / name).exists():
            raise ConfigError(f"pretrained checkpoint missing: {checkpoints / name}")
    model = build_skill_model(config.skill, config.network, config.ablation, config.seed)
    load_into(model, checkpoints / SKILL_CHECKPOINT)
    policy = build_run_policy(config)
    load_into(policy, checkpoints / POLICY_CHECKPOINT)
    manifest = RunManifest.load(run_dir) if (run_dir / "manifest.json").exists() else None
    return LoadedRun(run_dir, config, manifest, model, policy)


def cmd_eval(
    config: RunConfig,
    run_dir: Optional[Path | str] = None,
    agent: str = "goskill",
    run_id: Optional[str] = None,
) -> EvalReport:
    """Re-evaluate a trained run, or evaluate a scripted controller into its own run directory."""
    if agent != "goskill":
        tasks = list(config.env.train_tasks)
        with PipelineRun(config, run_id or default_run_id(config, agent), "eval", method=agent) as run:
            with run.phase("evaluation"):
                report = _evaluate_into(run, ScriptedAgent(agent, PointNavSuite(config.env)), tasks, run.directory.reports)
            run.manifest.metrics = report.metrics()
        return report
    if run_dir is None:
        raise ConfigError("eval --agent goskill needs a run directory")
    loaded = load_run(resolve_run(config.paths.run_root, run_dir))
    run_config = build_run_config(
        {**loaded.config.model_dump(mode="json"), "evaluation": config.evaluation.model_dump(mode="json")}
    )
    dataset, tasks = load_training_data(run_config, run_config.env.train_tasks)
    directory = RunDirectory(loaded.path.parent, loaded.path.name)
    with directory:
        store, _ = cached_policy_store(dataset, loaded.model, dataset.checksum(), directory.cache)
        goskill_agent = GoSkillAgent(
            loaded.model,
            loaded.policy,
            store,
            run_config.policy.context_length,
            run_config.policy.prompt_length,
            run_config.seed,
        )
        report = evaluate(
            goskill_agent,
            PointNavSuite(run_config.env),
            tasks,
            run_config.evaluation.episodes,
            run_config.evaluation.seeds,
            run_config.evaluation.seed,
            num_skills=run_config.skill.codebook_size,
        )
        report.write(directory.reports / "eval")
    return report


def cmd_baseline(config: RunConfig, run_id: Optional[str] = None) -> RunManifest:
    """Train the flat prompt-conditioned learner and evaluate it with the shared protocol."""
    dataset, tasks = load_training_data(config, config.env.train_tasks)
    with PipelineRun(config, run_id or default_run_id(config, "baseline"), "baseline", method="flat-baseline") as run:
        run.manifest.dataset_hash = dataset.checksum()
        run.manifest.hashes["dataset"] = run.manifest.dataset_hash
        with run.phase("baseline_training", config.baseline.iterations) as record:
            model = build_flat_baseline(config)
            model, prompts, losses = train_flat_baseline(dataset, config, tasks, model=model)
            record.final_loss = losses[-1] if losses else None
            run.manifest.hashes["baseline_checkpoint"] = run.save_checkpoint(record, BASELINE_CHECKPOINT, model)
        with run.phase("evaluation"):
            agent = FlatBaselineAgent(model, prompts, config.baseline.context_length)
            report = _evaluate_into(run, agent, tasks, run.directory.reports)
        run.manifest.metrics = report.metrics()
        return run.manifest


def _write_comparison(result: FinetuneResult, path: Path) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["task_id", "zero_shot_return", "finetuned_return", "zero_shot_success", "finetuned_success"])
        for row in result.comparison_rows():
            writer.writerow(list(row))
    return path


def _finetune_config(pretrained: RunConfig, config: RunConfig) -> RunConfig:
    """Model sections come from the pretrained run; fine-tune, evaluation and paths from ``config``."""
    data = pretrained.model_dump(mode="json")
    for section in ("finetune", "evaluation", "paths"):
        data[section] = getattr(config, section).model_dump(mode="json")
    data["schedule"]["parallel"] = config.schedule.parallel
    data["schedule"]["log_interval"] = config.schedule.log_interval
    return build_run_config(data)


def cmd_finetune(
    config: RunConfig,
    pretrain_dir: Path | str,
    baseline_dir: Optional[Path | str] = None,
    run_id: Optional[str] = None,
) -> RunManifest:
    """Fine-tune a pretrained run on the held-out tasks and record the before/after comparison."""
    pretrain_dir = resolve_run(config.paths.run_root, pretrain_dir)
    loaded = load_run(pretrain_dir)
    ft_config = _finetune_config(loaded.config, config)
    dataset, tasks = load_training_data(ft_config, ft_config.finetune.tasks)
    pretrained_hash = loaded.manifest.hashes.get("encoder_codebook") if loaded.manifest else None
    run_id = run_id or f"finetune-{pretrain_dir.name}"

    with PipelineRun(ft_config, run_id, "finetune") as run:
        run.manifest.dataset_hash = dataset.checksum()
        run.manifest.hashes["pretrained_run"] = str(pretrain_dir)
        with run.phase("finetune", ft_config.finetune.iterations) as record:
            result = finetune(loaded.model, loaded.policy, dataset, ft_config, tasks=tasks)
            run.manifest.hashes["encoder_codebook"] = result.frozen_after or ""
            run.manifest.hashes["skill_checkpoint"] = run.save_checkpoint(record, SKILL_CHECKPOINT, loaded.model)
            run.manifest.hashes["policy_checkpoint"] = run.save_checkpoint(record, POLICY_CHECKPOINT, loaded.policy)
            if "policy" in result.phases:
                record.final_loss = result.phases["policy"].final_loss
        if pretrained_hash is not None and pretrained_hash != result.frozen_after:
            raise ContractError("fine-tuned encoder/codebook hash differs from the pretrained run")
        result.zero_shot.write(run.directory.reports / "zero_shot")
        result.finetuned.write(run.directory.reports / "finetuned")
        _write_comparison(result, run.directory.reports / "comparison.csv")
        (run.directory.reports / "comparison.txt").write_text(result.comparison_text(), encoding="utf-8")
        run.manifest.metrics = {
            "zero_shot": result.zero_shot.metrics(),
            "finetuned": result.finetuned.metrics(),
        }
        manifest = run.manifest

    if baseline_dir is not None:
        baseline_dir = resolve_run(config.paths.run_root, baseline_dir)
        cmd_finetune_baseline(ft_config, baseline_dir, dataset, tasks, run_id=f"{run_id}-baseline")
    return manifest


def cmd_finetune_baseline(
    config: RunConfig,
    baseline_dir: Path | str,
    dataset: OfflineDataset,
    tasks: Sequence[int],
    run_id: str,
) -> RunManifest:
    checkpoint = Path(baseline_dir) / "checkpoints" / BASELINE_CHECKPOINT
    if not checkpoint.exists():
        raise ConfigError(f"baseline checkpoint missing: {checkpoint}")
    baseline_config = load_run_config(Path(baseline_dir) / "config.json")
    model = build_flat_baseline(baseline_config)
    load_into(model, checkpoint)
    with PipelineRun(config, run_id, "finetune", method="flat-baseline") as run:
        run.manifest.dataset_hash = dataset.checksum()
        with run.phase("finetune", config.finetune.iterations) as record:
            result = finetune_baseline(model, dataset, config, tasks=tasks)
            run.manifest.hashes["baseline_checkpoint"] = run.save_checkpoint(record, BASELINE_CHECKPOINT, model)
        result.zero_shot.write(run.directory.reports / "zero_shot")
        result.finetuned.write(run.directory.reports / "finetuned")
        _write_comparison(result, run.directory.reports / "comparison.csv")
        run.manifest.metrics = {
            "zero_shot": result.zero_shot.metrics(),
            "finetuned": result.finetuned.metrics(),
        }
        return run.manifest


__all__ = [
    "SKILL_CHECKPOINT",
    "POLICY_CHECKPOINT",
    "BASELINE_CHECKPOINT",
    "PipelineRun",
    "LoadedRun",
    "default_run_id",
    "load_training_data",
    "extract_skills",
    "cached_policy_store",
    "build_run_policy",
    "load_run",
    "cmd_collect",
    "cmd_run",
    "cmd_eval",
    "cmd_baseline",
    "cmd_finetune",
    "cmd_finetune_baseline",
]
