from __future__ import annotations

import numpy as np
import pytest

from goskill.compute import initialize
from goskill.config.settings import EnvConfig, NetworkConfig, OptimConfig
from goskill.envs.dataset import Trajectory, collect_from_config
from goskill.envs.point_nav import PointNavSuite
from goskill.policy import PolicyTrainer, build_policy, preprocess_policy_dataset, select_prompt
from goskill.runtime import (
    BaseAgent,
    GoSkillAgent,
    ScriptedAgent,
    co_train,
    evaluate,
    finetune,
    flat_baseline_train_and_eval,
    hierarchical_rollout,
    run_episodes,
    train_flat_baseline,
)
from goskill.runtime import agents as agents_module
from goskill.runtime.baseline import FlatBaselineTrainer, FlatPrompt, FlatPromptTransformer, assemble_flat_batch
from goskill.runtime.evaluation import REPORT_FILES
from goskill.runtime.schedule import build_prompts
from goskill.skills import SkillEnhancer, assign_skill_classes

from .helpers import extract_tiny_model, tiny_run_config


def _policy(model, seed=0):
    config = tiny_run_config()
    return build_policy(
        state_dim=model.state_dim,
        latent_dim=model.latent_dim,
        num_skills=model.codebook.size,
        policy=config.policy,
        network=config.network,
        ablation=config.ablation,
        env_horizon=config.env.horizon,
        skill_horizon=model.horizon,
        seed=seed,
    )


def _agent(model, store):
    config = tiny_run_config()
    return GoSkillAgent(model, _policy(model), store, config.policy.context_length, config.policy.prompt_length)


@pytest.fixture
def suite():
    return PointNavSuite(EnvConfig(horizon=30))


@pytest.fixture
def store(extracted_model, tiny_dataset):
    return preprocess_policy_dataset(tiny_dataset, extracted_model)


class NaNAgent(BaseAgent):
    name = "nan"

    def act(self, batch, logs):
        return np.full((len(batch), 2), np.nan)


def test_skills_are_selected_every_horizon_steps(extracted_model, store, suite):
    agent = _agent(extracted_model, store)
    logs = run_episodes(agent, suite, 0, list(range(25))) + run_episodes(agent, suite, 3, list(range(25, 50)))
    horizon = extracted_model.horizon
    assert len(logs) == 50
    for log in logs:
        assert all(d.step % horizon == 0 for d in log.decisions)
        assert [d.step for d in log.decisions] == list(range(0, log.steps, horizon))
        assert len(log.window_lengths) == len(log.decisions)
        assert all(0 < length <= horizon for length in log.window_lengths)
        assert sum(log.window_lengths) == log.steps
        assert all(0 <= d.skill_index < extracted_model.codebook.size for d in log.decisions)
        assert len(log.states) == log.steps + 1


def test_selected_embeddings_come_from_the_codebook(extracted_model, store, suite):
    log = run_episodes(_agent(extracted_model, store), suite, 3, [4])[0]
    for decision in log.decisions:
        np.testing.assert_array_equal(decision.embedding, extracted_model.codebook.lookup(decision.skill_index))


def test_hierarchical_rollout_respects_step_budget(extracted_model, store, suite):
    log = hierarchical_rollout(0, _policy(extracted_model), extracted_model, store, seed=5, max_steps=9, suite=suite, context_length=4, prompt_length=3)
    assert log.steps <= 9
    assert all(np.all(np.abs(action) <= 1.0) for action in log.actions)


def test_hierarchical_rollout_passes_its_seed_to_prompt_selection(extracted_model, store, suite, monkeypatch):
    seen = []

    def recording(task_id, prompts, seed=0, prompt_length=10):
        seen.append(seed)
        return select_prompt(task_id, prompts, seed, prompt_length)

    monkeypatch.setattr(agents_module, "select_prompt", recording)
    hierarchical_rollout(3, _policy(extracted_model), extracted_model, store, seed=17, max_steps=4, suite=suite, context_length=4, prompt_length=3)
    assert seen == [17]


def test_rollouts_are_deterministic(extracted_model, store, suite):
    first = run_episodes(_agent(extracted_model, store), suite, 0, [2, 3])
    second = run_episodes(_agent(extracted_model, store), suite, 0, [2, 3])
    for a, b in zip(first, second):
        assert a.total_return == b.total_return
        assert a.skill_indices == b.skill_indices


def test_non_finite_actions_end_the_episode(suite):
    log = run_episodes(NaNAgent(), suite, 0, [0])[0]
    assert log.error is not None
    assert log.steps == 0
    assert not log.success


def test_scripted_expert_solves_its_tasks():
    suite = PointNavSuite(EnvConfig())
    logs = run_episodes(ScriptedAgent("expert", suite), suite, 0, [0, 1, 2])
    assert all(log.success for log in logs)


def test_evaluation_aggregates_over_seed_groups(suite, tmp_path):
    report = evaluate(ScriptedAgent("random", suite), suite, [0, 3], n_episodes=2, n_seeds=2, base_seed=7)
    assert len(report.results) == 8
    per_seed = report.per_seed()
    assert len(per_seed) == 4
    for summary in report.per_task():
        groups = [row["return_mean"] for row in per_seed if row["task_id"] == summary.task_id]
        assert summary.return_mean == pytest.approx(np.mean(groups))
        assert summary.return_std == pytest.approx(np.std(groups))
        assert summary.episodes == 4
    assert report.aggregate()["return_mean"] == pytest.approx(np.mean([s.return_mean for s in report.per_task()]))

    out = report.write(tmp_path / "reports")
    for name in REPORT_FILES:
        assert (out / name).exists()
    assert "aggregate return" in (out / "summary.txt").read_text()


def test_evaluation_is_reproducible(suite):
    first = evaluate(ScriptedAgent("medium", suite), suite, [5], 2, 2)
    second = evaluate(ScriptedAgent("medium", suite), suite, [5], 2, 2)
    assert [r.total_return for r in first.results] == [r.total_return for r in second.results]


def test_evaluation_counts_selected_skills(extracted_model, store, suite):
    report = evaluate(_agent(extracted_model, store), suite, [0], 2, 1, num_skills=extracted_model.codebook.size, keep_logs=True)
    decisions = sum(len(log.decisions) for log in report.logs[0])
    assert report.skill_usage.shape == (1, extracted_model.codebook.size)
    assert report.skill_usage.sum() == decisions


def test_flat_baseline_trains_and_evaluates(tiny_dataset):
    config = tiny_run_config()
    _, prompts, losses = train_flat_baseline(tiny_dataset, config)
    assert sorted(prompts) == [0, 3]
    assert len(losses) == config.baseline.iterations
    assert all(np.isfinite(losses))
    report = flat_baseline_train_and_eval(tiny_dataset, config)
    assert report.tasks == [0, 3]
    assert len(report.results) == 2 * config.evaluation.episodes * config.evaluation.seeds
    assert not any(r.error for r in report.results)


@pytest.mark.slow
def test_flat_baseline_memorises_five_trajectories():
    rng = np.random.default_rng(21)
    trajectories = [
        Trajectory(task_id=0, states=rng.normal(size=(9, 11)), actions=rng.uniform(-0.5, 0.5, size=(8, 2)), rewards=rng.uniform(0, 1, size=8))
        for _ in range(5)
    ]
    demo = trajectories[0]
    prompt = FlatPrompt(0, demo.returns_to_go()[:3], demo.states[:3], demo.actions[:3], np.ones(3, dtype=bool))
    batch = assemble_flat_batch([(traj, 0) for traj in trajectories], [prompt] * 5, context_length=8)
    model = FlatPromptTransformer(prompt_length=3, max_timestep=9, network=NetworkConfig(n_layers=2, n_heads=2, width=32, dropout=0.0))
    initialize(model, 0)
    trainer = FlatBaselineTrainer(model, OptimConfig(lr=3e-3))
    mse = np.inf
    for _ in range(2000):
        mse = trainer.train_step(batch)
        if mse < 1e-3:
            break
    assert mse < 1e-3


def _co_train(dataset, parallel: bool):
    config = tiny_run_config()
    model = extract_tiny_model(dataset)
    store = preprocess_policy_dataset(dataset, model)
    prompts = build_prompts(store, store.tasks, 0, config.policy.prompt_length)
    enhancer = SkillEnhancer(model, assign_skill_classes(dataset, model), config.optim, 0, 2)
    policy = _policy(model)
    trainer = PolicyTrainer(policy, config.policy, config.optim, config.ablation)
    phases = co_train(enhancer, trainer, store, prompts, config, 3, 3, seed=0, parallel=parallel)
    return model, policy, phases


def test_parallel_co_training_matches_sequential(tiny_dataset):
    seq_model, seq_policy, seq = _co_train(tiny_dataset, parallel=False)
    par_model, par_policy, par = _co_train(tiny_dataset, parallel=True)
    assert seq["enhancement"].losses == par["enhancement"].losses
    assert seq["policy"].losses == par["policy"].losses
    assert seq_model.checksum() == par_model.checksum()
    assert seq_policy.checksum() == par_policy.checksum()


def test_co_training_keeps_encoder_and_codebook_frozen(tiny_dataset):
    frozen = extract_tiny_model(tiny_dataset).frozen_checksum()
    model, _, phases = _co_train(tiny_dataset, parallel=False)
    assert model.frozen_checksum() == frozen
    assert len(phases["enhancement"].losses) == 3


@pytest.fixture
def heldout_dataset():
    config = tiny_run_config()
    return collect_from_config(config.data, config.env, config.finetune.tasks)


def test_zero_iteration_finetune_equals_zero_shot(extracted_model, heldout_dataset):
    config = tiny_run_config()
    result = finetune(extracted_model, _policy(extracted_model), heldout_dataset, config, iterations=0)
    assert result.finetuned is result.zero_shot
    assert result.frozen_before == result.frozen_after
    assert [row[0] for row in result.comparison_rows()] == [8]


def test_finetune_trains_decoder_and_policy_only(extracted_model, heldout_dataset):
    config = tiny_run_config()
    frozen = extracted_model.frozen_checksum()
    decoder = extracted_model.decoder.checksum()
    result = finetune(extracted_model, _policy(extracted_model), heldout_dataset, config, iterations=2)
    assert result.frozen_after == frozen
    assert extracted_model.decoder.checksum() != decoder
    assert len(result.phases["policy"].losses) == 2
    assert "zero_shot_return" in result.comparison_text()
