from __future__ import annotations

import numpy as np
import pytest

from goskill.config.settings import EnvConfig
from goskill.envs import PointNavSuite, STATE_DIM, TASKS, build_controller, get_task
from goskill.envs.dataset import run_episode
from goskill.envs.point_nav import LATCH, POS, Primitive
from goskill.errors import ConfigError, NumericError


@pytest.fixture
def suite() -> PointNavSuite:
    return PointNavSuite(EnvConfig())


def _mean_return(suite: PointNavSuite, quality: str, task_id: int, seeds) -> float:
    controller = build_controller(quality, suite)
    return float(np.mean([run_episode(suite, controller, task_id, seed).total_return for seed in seeds]))


def test_reset_is_deterministic_per_seed(suite):
    first = suite.reset(4, 123)
    second = suite.reset(4, 123)
    np.testing.assert_array_equal(first.observation, second.observation)
    other = suite.reset(4, 124)
    assert not np.array_equal(first.observation[4:10], other.observation[4:10])


def test_every_task_shares_the_state_space(suite):
    assert len(TASKS) == 10
    for task_id in TASKS:
        assert suite.reset(task_id, 0).observation.shape == (STATE_DIM,)


def test_unknown_task_is_a_config_error(suite):
    with pytest.raises(ConfigError):
        suite.reset(42, 0)
    with pytest.raises(ConfigError):
        get_task("nope")


def test_zero_action_from_rest_only_costs_time(suite):
    state = suite.reset(0, 7)
    next_state, reward, done = suite.step(state, np.zeros(2))
    np.testing.assert_array_equal(next_state.observation[POS], state.observation[POS])
    assert reward == pytest.approx(-suite.config.time_penalty)
    assert not done


def test_moving_toward_the_waypoint_pays_more(suite):
    state = suite.reset(1, 3)
    direction = suite.current_target(state) - state.observation[POS]
    direction /= np.linalg.norm(direction)
    _, toward, _ = suite.step(state, direction)
    _, away, _ = suite.step(state, -direction)
    assert toward > away


def test_actions_are_clipped(suite):
    state = suite.reset(0, 5)
    big, _, _ = suite.step(state, np.array([50.0, -50.0]))
    unit, _, _ = suite.step(state, np.array([1.0, -1.0]))
    np.testing.assert_array_equal(big.observation, unit.observation)


def test_non_finite_action_raises(suite):
    with pytest.raises(NumericError):
        suite.step(suite.reset(0, 0), np.array([np.nan, 0.0]))


def test_episode_stops_at_horizon():
    suite = PointNavSuite(EnvConfig(horizon=5))
    state = suite.reset(3, 0)
    done = False
    steps = 0
    while not done:
        state, _, done = suite.step(state, np.zeros(2))
        steps += 1
    assert steps == 5
    assert not state.success


def test_press_sets_latch_and_grasp_carries_object():
    suite = PointNavSuite(EnvConfig())
    expert = build_controller("expert", suite)
    press = run_episode(suite, expert, 2, 11)
    assert press.success
    assert press.states[-1, LATCH] == -1.0
    grasp = run_episode(suite, expert, 3, 11)
    holding = np.flatnonzero(grasp.states[:, LATCH] == 1.0)
    assert holding.size > 0
    after = grasp.states[holding[-1]]
    np.testing.assert_array_equal(after[8:10], after[POS])


def test_task_templates_reuse_primitives():
    used = {primitive for task in TASKS.values() for primitive in task.waypoint_template}
    assert used == set(Primitive)
    assert get_task(8).waypoint_template == (Primitive.REACH_A, Primitive.PRESS)


def test_batch_step_matches_single_step(suite):
    batch = suite.reset_batch([0, 5], [1, 2])
    actions = np.array([[0.5, -0.2], [-1.0, 0.3]])
    rewards = suite.step_batch(batch, actions)
    for row, (task, seed) in enumerate([(0, 1), (5, 2)]):
        single, reward, _ = suite.step(suite.reset(task, seed), actions[row])
        np.testing.assert_array_equal(batch.observations[row], single.observation)
        assert rewards[row] == reward


def test_expert_beats_random_on_every_task(suite):
    seeds = range(20)
    for task_id in TASKS:
        assert _mean_return(suite, "expert", task_id, seeds) > _mean_return(suite, "random", task_id, seeds)


@pytest.mark.parametrize("task_id", [0, 5])
def test_quality_ordering(suite, task_id):
    seeds = range(20)
    expert = _mean_return(suite, "expert", task_id, seeds)
    medium = _mean_return(suite, "medium", task_id, seeds)
    random = _mean_return(suite, "random", task_id, seeds)
    assert expert > medium > random


def test_unknown_controller_is_a_config_error(suite):
    with pytest.raises(ConfigError):
        build_controller("oracle", suite)
