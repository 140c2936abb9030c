import math

import numpy as np
import pytest

from qsac.environment import (
    ArmEnv,
    ArmState,
    EnvConfig,
    forward_kinematics,
    integrate,
    mechanical_energy,
    observe,
    reset_state,
    step_state,
)
from qsac.exceptions import ConfigurationError, EpisodeDoneError
from qsac.utils import wrap_angle


@pytest.fixture
def config():
    return EnvConfig()


def resting(target, **kwargs):
    return ArmState(theta=0.0, phi=0.0, omega_theta=0.0, omega_phi=0.0, target=target, **kwargs)


@pytest.mark.parametrize(
    ("theta", "phi", "expected"),
    (
        (0.0, 0.0, (0.0, -0.5, 0.0, -1.0)),
        (math.pi / 2, math.pi / 2, (0.5, 0.0, 1.0, 0.0)),
        (math.pi, 0.0, (0.0, 0.5, 0.0, 0.0)),
    ),
)
def test_forward_kinematics(theta, phi, expected):
    assert forward_kinematics(theta, phi, 0.5) == pytest.approx(expected, abs=1e-12)


def test_bad_config():
    with pytest.raises(ConfigurationError):
        EnvConfig(fps=0)
    with pytest.raises(ConfigurationError):
        EnvConfig(max_joint_velocity=-1.0)


def test_reset_observation(config):
    obs = observe(config, resting((0.3, 0.4)))
    assert obs.tolist() == pytest.approx([0.3, 0.4, 0.0, -1.0, 0.0, 0.0])


def test_reset_targets(config):
    rng = np.random.default_rng(0)
    for _ in range(500):
        state = reset_state(config, rng)
        x, y = state.target
        assert math.hypot(x, y) <= config.reach
        assert math.hypot(x, y + 1.0) > config.distance_threshold
        assert (state.theta, state.phi, state.omega_theta, state.omega_phi, state.step_index) == (0, 0, 0, 0, 0)


def test_same_seed_same_targets():
    first, second = ArmEnv(rng=np.random.default_rng(42)), ArmEnv(rng=np.random.default_rng(42))
    for _ in range(1000):
        assert np.array_equal(first.reset(), second.reset())


@pytest.mark.parametrize(("target", "reward", "done"), (((0.0, -0.7), -0.3, False), ((0.0, -0.8), 5.0, True)))
def test_reward(config, target, reward, done):
    state, result = step_state(config, resting(target), (0.0, 0.0))
    assert result.reward == pytest.approx(reward)
    assert result.done is done is state.done
    assert result.steps_used == 1


def test_step_after_done(config):
    state, _ = step_state(config, resting((0.0, -0.8)), (0.0, 0.0))
    with pytest.raises(EpisodeDoneError):
        step_state(config, state, (0.0, 0.0))


def test_env_requires_reset():
    with pytest.raises(EpisodeDoneError):
        ArmEnv().step((0.0, 0.0))


def test_truncation():
    config = EnvConfig(max_steps=3)
    state = resting((0.0, 0.9))
    for expected_done in (False, False, True):
        state, result = step_state(config, state, (0.0, 0.0))
        assert result.done is expected_done
        assert not result.reached
    assert result.steps_used == 3


def test_non_finite_action(config):
    with pytest.raises(ValueError):
        step_state(config, resting((0.0, 0.9)), (np.nan, 0.0))


def test_random_steps_respect_invariants(config):
    rng = np.random.default_rng(3)
    env = ArmEnv(config, rng)
    env.reset()
    for _ in range(2000):
        before = env.state
        result = env.step(rng.uniform(-2000.0, 2000.0, size=2))
        after = env.state
        assert abs(after.omega_theta) <= config.max_joint_velocity
        assert abs(after.omega_phi) <= config.max_joint_velocity
        assert -math.pi <= after.theta < math.pi and -math.pi <= after.phi < math.pi
        assert abs(wrap_angle(after.theta - before.theta)) <= config.max_joint_velocity * config.dt + 1e-12
        assert abs(wrap_angle(after.phi - before.phi)) <= config.max_joint_velocity * config.dt + 1e-12
        assert result.reward == (5.0 if result.reached else -result.distance)
        if result.done:
            env.reset()


def test_large_torque_saturates_velocity(config):
    state = integrate(config, resting((0.0, 0.9)), 1000.0, -1000.0)
    assert abs(state.omega_theta) == config.max_joint_velocity
    assert abs(state.omega_phi) == config.max_joint_velocity


def test_energy_drift_without_torque(config):
    state = ArmState(theta=0.2, phi=0.28, omega_theta=0.0, omega_phi=0.0, target=(0.0, 0.9))
    start = mechanical_energy(config, state)
    for _ in range(250):
        state = integrate(config, state, 0.0, 0.0)
        assert max(abs(state.omega_theta), abs(state.omega_phi)) < config.max_joint_velocity
    assert abs(mechanical_energy(config, state) - start) < 0.01 * abs(start)
