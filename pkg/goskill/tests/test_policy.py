from __future__ import annotations

import math

import numpy as np
import pytest

from goskill.compute import Tensor, initialize, no_grad, softmax_cross_entropy
from goskill.config.settings import AblationConfig, NetworkConfig, OptimConfig, PolicyConfig, SkillConfig
from goskill.envs.dataset import Trajectory
from goskill.errors import ConfigError, ContractError, DataError, TargetIndexError
from goskill.policy import (
    PolicyBatch,
    PolicyTrainer,
    SkillPolicy,
    assemble_batch,
    build_policy,
    focal_loss,
    load_policy_store,
    policy_cache_key,
    policy_forward,
    preprocess_policy_dataset,
    sample_policy_batch,
    save_policy_store,
    select_prompt,
)
from goskill.policy.preprocessing import decision_points, preprocess_trajectory
from goskill.skills import assign_skill_classes, build_skill_model

from .helpers import assert_grad_close, numeric_grad, tiny_run_config


@pytest.fixture
def store(extracted_model, tiny_dataset):
    return preprocess_policy_dataset(tiny_dataset, extracted_model)


@pytest.fixture
def prompts(store):
    return {task: select_prompt(task, store, seed=0, prompt_length=3) for task in store.tasks}


def _policy(model, ablation=None, seed=0):
    config = tiny_run_config()
    policy = build_policy(
        state_dim=model.state_dim,
        latent_dim=model.latent_dim,
        num_skills=model.codebook.size,
        policy=config.policy,
        network=config.network,
        ablation=ablation or config.ablation,
        env_horizon=config.env.horizon,
        skill_horizon=model.horizon,
        seed=seed,
    )
    return policy.eval()


def _batch(store, prompts, seed=0):
    return sample_policy_batch(store, prompts, 2, 4, np.random.default_rng(seed))


# -- focal loss -----------------------------------------------------------
def test_focal_loss_examples():
    probs = Tensor(np.array([0.8, 0.2]))
    assert focal_loss(probs, 0, 0.0).loss.item() == pytest.approx(0.223144, abs=1e-6)
    assert focal_loss(probs, 0, 2.0).loss.item() == pytest.approx(0.008926, abs=1e-6)
    assert focal_loss(Tensor(np.array([1.0, 0.0])), 0, 2.0).loss.item() == pytest.approx(0.0, abs=1e-12)


def test_focal_loss_without_focusing_is_cross_entropy():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        logits = rng.normal(size=5) * 3
        target = int(rng.integers(5))
        probs = Tensor(logits).softmax(axis=-1)
        focal = focal_loss(probs, target, 0.0).loss.item()
        assert focal == pytest.approx(softmax_cross_entropy(Tensor(logits), target).item(), abs=1e-12)


def test_focal_loss_clamps_zero_probability():
    result = focal_loss(Tensor(np.array([0.0, 1.0])), 0, 2.0)
    assert result.clamped == 1
    assert np.isfinite(result.loss.item())


def test_focal_loss_masks_and_validates():
    probs = Tensor(np.array([[0.5, 0.5], [0.9, 0.1]]))
    masked = focal_loss(probs, np.array([0, 1]), 0.0, mask=np.array([1.0, 0.0]))
    assert masked.loss.item() == pytest.approx(math.log(2))
    with pytest.raises(TargetIndexError):
        focal_loss(probs, np.array([0, 2]), 2.0)
    with pytest.raises(ConfigError):
        focal_loss(probs, np.array([0, 1]), -1.0)


# -- preprocessing --------------------------------------------------------
def _trajectory(length: int) -> Trajectory:
    rng = np.random.default_rng(length)
    return Trajectory(
        task_id=0,
        states=rng.normal(size=(length + 1, 11)),
        actions=rng.uniform(-1, 1, size=(length, 2)),
        rewards=rng.normal(size=length),
    )


def test_decision_points_and_partial_tail():
    config = tiny_run_config()
    model = build_skill_model(SkillConfig(horizon=10, codebook_size=4, latent_dim=8, encoder_hidden=[16]), config.network, config.ablation, seed=0)
    traj = _trajectory(25)
    seq = preprocess_trajectory(traj, model)
    assert decision_points(25, 10).tolist() == [0, 10, 20]
    assert seq.valid.tolist() == [True, True, False]
    assert seq.rtg[0] == pytest.approx(traj.total_return)
    np.testing.assert_array_equal(seq.states, traj.states[[0, 10, 20]])

    short = preprocess_trajectory(_trajectory(3), model)
    assert len(short) == 1 and not short.valid[0]


def test_preprocessed_indices_match_skill_classes(store, extracted_model, tiny_dataset):
    classes = assign_skill_classes(tiny_dataset, extracted_model)
    labels = {
        (ref.task_id, ref.trajectory, ref.start): skill
        for ref, skill in zip(classes.segments, classes.indices.tolist())
    }
    horizon = extracted_model.horizon
    for seq in store:
        for k in np.flatnonzero(seq.valid):
            assert seq.targets[k] == labels[(seq.task_id, seq.trajectory, int(k) * horizon)]
        np.testing.assert_array_equal(seq.embeddings, extracted_model.codebook.lookup(seq.targets))


def test_policy_cache_round_trip_and_key(store, tmp_path):
    path = save_policy_store(store, tmp_path / "cache.npz")
    loaded = load_policy_store(path)
    assert loaded.horizon == store.horizon
    assert len(loaded) == len(store)
    for original, restored in zip(store, loaded):
        np.testing.assert_array_equal(original.targets, restored.targets)
        np.testing.assert_array_equal(original.valid, restored.valid)
    assert load_policy_store(tmp_path / "absent.npz") is None
    assert policy_cache_key("a", "b", 4) != policy_cache_key("a", "b", 5)


# -- prompts --------------------------------------------------------------
def test_prompt_comes_from_best_demonstration(store):
    for task in store.tasks:
        prompt = select_prompt(task, store, seed=0, prompt_length=3)
        best = max(seq.rtg[0] for seq in store.for_task(task))
        assert prompt.max_return == best
        assert prompt.mask.dtype == bool and prompt.mask[0]


def test_single_triple_prompt_is_the_demo_start(store):
    prompt = select_prompt(0, store, seed=0, prompt_length=1)
    demo = store.for_task(0)[prompt.source]
    np.testing.assert_array_equal(prompt.states[0], demo.states[0])
    assert prompt.mask.tolist() == [True]


def test_prompt_needs_demonstrations(store):
    with pytest.raises(DataError):
        select_prompt(7, store)


# -- policy network -------------------------------------------------------
def test_policy_outputs_distributions(extracted_model, store, prompts):
    batch = _batch(store, prompts)
    probs = policy_forward(_policy(extracted_model), batch).data
    assert probs.shape == (len(batch), 4, extracted_model.codebook.size)
    assert np.all(np.abs(probs.sum(axis=-1) - 1.0) < 1e-9)


def test_policy_is_causal_over_decision_points(extracted_model, store, prompts):
    policy = _policy(extracted_model)
    batch = _batch(store, prompts)
    before = policy_forward(policy, batch).data
    rng = np.random.default_rng(3)
    batch.rtg[:, 2:] += 50.0
    batch.states[:, 2:] += rng.normal(size=batch.states[:, 2:].shape)
    batch.skills[:, 1:] += 1.0
    after = policy_forward(policy, batch).data
    np.testing.assert_array_equal(before[:, :2], after[:, :2])


def test_right_padding_marks_missing_points(store, prompts):
    seq = store.for_task(0)[0]
    batch = assemble_batch([(seq, len(seq) - 1)], [prompts[0]], context_length=4)
    assert batch.present.tolist() == [[True, False, False, False]]


def test_misaligned_tokens_are_a_contract_error(extracted_model, store, prompts):
    batch = _batch(store, prompts)
    batch.states = batch.states[:, :3]
    with pytest.raises(ContractError):
        policy_forward(_policy(extracted_model), batch)


def test_continuous_policy_regresses_embeddings(extracted_model, store, prompts):
    policy = _policy(extracted_model, AblationConfig(vq=False))
    out = policy_forward(policy, _batch(store, prompts)).data
    assert out.shape[-1] == extracted_model.latent_dim


# -- training -------------------------------------------------------------
def test_uniform_head_starts_near_log_m(extracted_model, store, prompts):
    trainer = PolicyTrainer(_policy(extracted_model), PolicyConfig(gamma=0.0))
    loss = trainer.loss(_batch(store, prompts)).item()
    assert loss == pytest.approx(math.log(extracted_model.codebook.size), abs=0.05)


def test_policy_gradients_match_finite_differences(extracted_model, store, prompts):
    policy = _policy(extracted_model)
    trainer = PolicyTrainer(policy, PolicyConfig(gamma=2.0))
    batch = _batch(store, prompts)

    def loss() -> float:
        with no_grad():
            return trainer.loss(batch).item()

    trainer.loss(batch).backward()
    for param in (policy.head.weight, policy.embed_state.weight):
        assert_grad_close(param.grad, numeric_grad(loss, param.data))


def test_policy_step_leaves_skill_model_untouched(extracted_model, store, prompts):
    config = tiny_run_config()
    skill_before = extracted_model.checksum()
    policy = _policy(extracted_model)
    trainer = PolicyTrainer(policy, config.policy, config.optim, config.ablation)
    batch = _batch(store, prompts)
    losses = [trainer.policy_train_step(batch) for _ in range(100)]
    assert extracted_model.checksum() == skill_before
    assert losses[-1] < losses[0]


def test_same_history_under_another_task_prompt_changes_the_prediction(extracted_model, store, prompts):
    config = tiny_run_config()
    policy = _policy(extracted_model)
    trainer = PolicyTrainer(policy, config.policy, config.optim, config.ablation)
    for step in range(20):
        trainer.policy_train_step(_batch(store, prompts, seed=step))
    policy.eval()
    seq = store.for_task(0)[0]
    own = policy_forward(policy, assemble_batch([(seq, 0)], [prompts[0]], 4)).data
    other = policy_forward(policy, assemble_batch([(seq, 0)], [prompts[3]], 4)).data
    assert np.abs(own - other).max() > 0.0


def _toy_batch(rng, rows=5, points=6, prompt_length=3, num_skills=4) -> PolicyBatch:
    targets = rng.integers(num_skills, size=(rows, points))
    codes = rng.normal(size=(num_skills, 8))
    everywhere = np.ones((rows, points), dtype=bool)
    return PolicyBatch(
        prompt_rtg=rng.uniform(0, 50, size=(rows, prompt_length)),
        prompt_states=rng.normal(size=(rows, prompt_length, 11)),
        prompt_skills=rng.normal(size=(rows, prompt_length, 8)),
        prompt_mask=np.ones((rows, prompt_length), dtype=bool),
        rtg=rng.uniform(0, 50, size=(rows, points)),
        states=rng.normal(size=(rows, points, 11)),
        skills=codes[targets],
        timesteps=np.tile(np.arange(points), (rows, 1)),
        present=everywhere,
        targets=targets,
        target_embeddings=codes[targets],
        valid=everywhere.copy(),
    )


@pytest.mark.slow
def test_policy_memorises_five_sequences():
    batch = _toy_batch(np.random.default_rng(4))
    policy = SkillPolicy(
        state_dim=11,
        latent_dim=8,
        num_skills=4,
        prompt_length=3,
        max_decisions=8,
        network=NetworkConfig(n_layers=2, n_heads=2, width=32, dropout=0.0),
    )
    initialize(policy, 0)
    trainer = PolicyTrainer(policy, PolicyConfig(), OptimConfig(lr=3e-3))
    accuracy = 0.0
    for step in range(1, 1001):
        trainer.policy_train_step(batch)
        if step % 10 == 0:
            with no_grad():
                predicted = np.argmax(policy_forward(policy.eval(), batch).data, axis=-1)
            accuracy = float(np.mean(predicted == batch.targets))
            if accuracy == 1.0:
                break
    assert accuracy == 1.0
