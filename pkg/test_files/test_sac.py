import logging
import math
import time

import numpy as np
import pytest
from scipy.stats import chisquare

from qsac.config import load_config, to_hyperparams
from qsac.dense import AdamState
from qsac.environment import EnvConfig
from qsac.exceptions import BufferNotReadyError, ConfigurationError, DivergenceError
from qsac.gradcheck import central_difference
from qsac.networks import build_actor, build_critic
from qsac.sac import (
    Batch,
    ReplayBuffer,
    SacAgent,
    SacHyperparams,
    Transition,
    actor_objective,
    actor_update,
    buffer_push,
    buffer_sample,
    compute_targets,
    critic_update,
    soft_update,
    train_run,
)


def transition(i: float) -> Transition:
    return Transition(np.full(6, i), np.full(2, i), float(i), np.full(6, i + 0.5), 0.0)


@pytest.fixture
def batch():
    rng = np.random.default_rng(0)
    return Batch(
        obs=rng.uniform(-1, 1, size=(8, 6)),
        actions=rng.uniform(-1000, 1000, size=(8, 2)),
        rewards=rng.uniform(-1, 0, size=8),
        next_obs=rng.uniform(-1, 1, size=(8, 6)),
        dones=np.zeros(8),
    )


@pytest.fixture
def tiny_config():
    return EnvConfig(max_steps=15)


@pytest.fixture
def tiny_hyper():
    return SacHyperparams(batch_size=8, warmup_steps=20, memory_size=500)


def test_push_to_empty():
    assert len(buffer_push(ReplayBuffer(10), transition(1))) == 1


def test_ring_drops_oldest():
    buffer = ReplayBuffer(capacity=3)
    for i in range(4):
        buffer.push(transition(i))
    assert len(buffer) == 3
    assert buffer.contents().rewards.tolist() == [1.0, 2.0, 3.0]


def test_buffer_grows_in_order():
    buffer = ReplayBuffer(capacity=3000)
    for i in range(2500):
        buffer.push(transition(i))
    contents = buffer.contents()
    assert contents.rewards.tolist() == list(map(float, range(2500)))
    assert contents.next_obs[-1, 0] == 2499.5


def test_sample_not_ready():
    buffer = ReplayBuffer(10).push(transition(0))
    with pytest.raises(BufferNotReadyError):
        buffer_sample(buffer, 2, np.random.default_rng(0))


def test_sample_with_replacement():
    buffer = ReplayBuffer(10).push(transition(7))
    sampled = buffer_sample(buffer, 4, np.random.default_rng(0))
    assert sampled.rewards.tolist() == [7.0] * 4
    assert np.array_equal(sampled.obs, np.full((4, 6), 7.0))


def test_sample_is_uniform():
    buffer = ReplayBuffer(100)
    for i in range(100):
        buffer.push(transition(i))
    rewards = buffer.sample(100_000, np.random.default_rng(1)).rewards
    counts = np.bincount(rewards.astype(int), minlength=100)
    assert counts.sum() == 100_000
    assert chisquare(counts).pvalue > 0.01


def test_hyperparam_ranges():
    with pytest.raises(ConfigurationError):
        SacHyperparams(gamma=1.5)
    with pytest.raises(ConfigurationError):
        SacHyperparams(batch_size=0)


def linear_critic(weights, bias):
    critic = build_critic("(8,1)")
    critic.params["pre.0.weights"] = np.array([weights], dtype=float)
    critic.params["pre.0.bias"] = np.array([bias], dtype=float)
    return critic


@pytest.mark.parametrize(("gamma", "done"), ((0.99, 1.0), (0.0, 0.0)))
def test_targets_reduce_to_reward(batch, gamma, done):
    batch.dones[:] = done
    critics = [linear_critic(np.ones(8), 3.0), linear_critic(np.ones(8), 1.0)]
    actor = build_actor("(6,7)(8,(1,1))", rng=np.random.default_rng(1))
    y = compute_targets(batch, actor, critics, SacHyperparams(gamma=gamma), np.ones((8, 2)))
    assert np.array_equal(y, batch.rewards)


def test_targets_by_hand():
    actor = build_actor("(6,7)(8,(1,1))")
    critics = [linear_critic(np.arange(8.0) / 10, 0.5), linear_critic(np.full(8, 0.2), -0.1)]
    hyper = SacHyperparams(gamma=0.9, entropy_alpha=0.2)
    batch = Batch(
        obs=np.zeros((2, 6)),
        actions=np.zeros((2, 2)),
        rewards=np.array([-0.4, 5.0]),
        next_obs=np.array([[0.1, 0.2, 0.0, -1.0, 0.0, 0.0], [-0.3, 0.5, 0.1, -0.9, 0.2, 0.1]]),
        dones=np.array([0.0, 1.0]),
    )
    noise = np.array([[0.3, -1.2], [0.0, 0.5]])
    y = compute_targets(batch, actor, critics, hyper, noise)

    # zero actor: mean 0, log_std 0, so u = noise
    squashed = np.tanh(noise[0])
    action = 1000.0 * squashed
    log_prob = sum(
        -0.5 * n * n - 0.5 * math.log(2 * math.pi) - math.log(1000.0 * (1 - t * t) + 1e-6)
        for n, t in zip(noise[0], squashed)
    )
    features = np.concatenate([batch.next_obs[0], action / 1000.0])
    q1 = float(np.arange(8.0) / 10 @ features + 0.5)
    q2 = float(np.full(8, 0.2) @ features - 0.1)
    expected = -0.4 + 0.9 * (min(q1, q2) - 0.2 * log_prob)
    assert y[0] == pytest.approx(expected, abs=1e-10)
    assert y[1] == 5.0


def test_targets_diverge_on_nan(batch):
    batch.rewards[0] = np.nan
    critics = [linear_critic(np.ones(8), 0.0)] * 2
    with pytest.raises(DivergenceError):
        compute_targets(batch, build_actor("(6,7)(8,(1,1))"), critics, SacHyperparams(), np.zeros((8, 2)))


def test_critic_at_minimum_is_unchanged(batch):
    critics = [build_critic("(8,16,1)", rng=np.random.default_rng(s)) for s in (1, 2)]
    before = [critic.flat() for critic in critics]
    y = critics[0].forward_batch(batch.obs, batch.actions)[0]
    critics[1].load_flat(critics[0].flat())
    before[1] = critics[1].flat()
    losses = critic_update(batch, y, critics, [AdamState.fresh(c.n_params) for c in critics], SacHyperparams())
    assert losses == [0.0, 0.0]
    assert all(np.array_equal(critic.flat(), flat) for critic, flat in zip(critics, before))


def test_single_transition_gradient():
    critic = linear_critic([0.1, -0.2, 0.3, 0.0, 0.5, 0.1, 0.4, -0.3], 0.2)
    obs, action = np.array([[0.5, -0.5, 0.1, -0.9, 0.3, 0.2]]), np.array([[400.0, -100.0]])
    q, cache = critic.forward_batch(obs, action)
    y = np.array([1.0])
    grads, _, _ = critic.backward_batch(cache, 2.0 * (q - y))
    x = np.concatenate([obs[0], action[0] / 1000.0])
    assert grads["pre.0.weights"][0] == pytest.approx(2.0 * (q[0] - 1.0) * x)
    assert grads["pre.0.bias"][0] == pytest.approx(2.0 * (q[0] - 1.0))


def test_overfitting_one_batch(batch):
    critics = [build_critic("(8,1)", rng=np.random.default_rng(s)) for s in (3, 4)]
    states = [AdamState.fresh(c.n_params) for c in critics]
    y = np.full(len(batch), 50.0)
    hyper = SacHyperparams(lr=1e-3)
    losses = [critic_update(batch, y, critics, states, hyper)[0] for _ in range(101)]
    assert all(later < earlier for earlier, later in zip(losses, losses[1:]))


def test_actor_gradient_vanishes_without_entropy_or_critic(batch):
    actor = build_actor("(6,7)(8,(1,1))", rng=np.random.default_rng(0))
    critics = [build_critic("(8,16,1)"), build_critic("(8,16,1)")]
    _, grads = actor_objective(batch, actor, critics, SacHyperparams(entropy_alpha=0.0), np.ones((8, 2)))
    assert not grads.any()


@pytest.mark.parametrize("actor_text", ("(6,7)(8,(1,1))", "(6,VQA(2 layers),(1,1))"))
def test_actor_gradient_matches_finite_differences(batch, actor_text):
    rng = np.random.default_rng(5)
    actor = build_actor(actor_text, rng=rng)
    critics = [build_critic("(8,16,1)", rng=rng), build_critic("(8,16,1)", rng=rng)]
    hyper = SacHyperparams()
    noise = rng.standard_normal((8, 2))
    _, analytic = actor_objective(batch, actor, critics, hyper, noise)

    shadow = actor.copy()

    def loss(flat):
        shadow.load_flat(flat)
        return actor_objective(batch, shadow, critics, hyper, noise)[0]

    numeric = central_difference(loss, actor.flat())
    assert np.max(np.abs(analytic - numeric)) / max(1.0, np.max(np.abs(numeric))) < 1e-5


@pytest.mark.parametrize(("rho", "expected"), ((1.0, 0.0), (0.0, 2.0), (0.5, 1.0)))
def test_soft_update(rho, expected):
    assert soft_update(np.zeros(3), np.full(3, 2.0), rho).tolist() == [expected] * 3


def test_agent_update_moves_targets(batch):
    agent = SacAgent.build("(6,7)(8,(1,1))", "(8,16,1)", SacHyperparams(rho=0.5), seed=0)
    before = agent.target_critics[0].flat()
    losses = agent.update(batch, np.random.default_rng(0))
    assert set(losses) == {"critic1", "critic2", "actor"}
    expected = 0.5 * before + 0.5 * agent.critics[0].flat()
    assert np.allclose(agent.target_critics[0].flat(), expected)


def test_warmup_leaves_agent_untouched(tiny_config):
    hyper = SacHyperparams(batch_size=8, warmup_steps=10_000)
    agent = SacAgent.build("(6,7)(8,(1,1))", "(8,16,1)", hyper, seed=3)
    before = agent.actor.flat()
    records = train_run(tiny_config, agent, seed=3, max_episodes=2, record_wall_time=False)
    assert [r.episode for r in records] == [1, 2]
    assert np.array_equal(agent.actor.flat(), before)


def run_twice(tiny_config, tiny_hyper, actor, critic):
    runs = []
    for _ in range(2):
        agent = SacAgent.build(actor, critic, tiny_hyper, seed=11)
        runs.append(train_run(tiny_config, agent, seed=11, max_episodes=4, run_id="det", record_wall_time=False))
    return runs


@pytest.mark.parametrize(
    ("actor", "critic"),
    (("(6,7)(8,(1,1))", "(8,16,1)"), ("(6,VQA(2 layers),(1,1))", "(8,4,VQA(2 layers),1)")),
)
def test_same_seed_same_run(tiny_config, tiny_hyper, actor, critic):
    first, second = run_twice(tiny_config, tiny_hyper, actor, critic)
    assert first == second
    assert all(1 <= r.steps <= tiny_config.max_steps for r in first)


def test_checkpoint_callback(tiny_config):
    hyper = SacHyperparams(batch_size=8, warmup_steps=20, checkpoint_every=2)
    agent = SacAgent.build("(6,7)(8,(1,1))", "(8,16,1)", hyper, seed=0)
    seen = []
    train_run(tiny_config, agent, seed=0, checkpoint_callback=lambda a, e: seen.append(e), max_episodes=5)
    assert seen == [2, 4]


def test_update_losses_logged_only_at_debug(tiny_config, caplog):
    hyper = SacHyperparams(batch_size=4, warmup_steps=5, memory_size=100)
    caplog.set_level(logging.INFO, logger="qsac")
    train_run(tiny_config, SacAgent.build("(6,7)(8,(1,1))", "(8,16,1)", hyper, seed=2), seed=2, max_episodes=3)
    assert "critic1 loss" not in caplog.text
    caplog.set_level(logging.DEBUG, logger="qsac")
    train_run(tiny_config, SacAgent.build("(6,7)(8,(1,1))", "(8,16,1)", hyper, seed=2), seed=2, max_episodes=3)
    assert "critic1 loss" in caplog.text


@pytest.mark.slow
def test_full_qsac_update_fits_smoke_budget():
    config = load_config("full_qsac")
    hyper = to_hyperparams(config)
    agent = SacAgent.build(
        config.actor.architecture,
        config.critic.architecture,
        hyper,
        seed=0,
        actor_activations=config.actor.activations,
        critic_activations=config.critic.activations,
    )
    rng = np.random.default_rng(1)
    size = hyper.batch_size
    batch = Batch(
        obs=rng.uniform(-1, 1, size=(size, 6)),
        actions=rng.uniform(-1000, 1000, size=(size, 2)),
        rewards=rng.uniform(-1, 0, size=size),
        next_obs=rng.uniform(-1, 1, size=(size, 6)),
        dones=np.zeros(size),
    )
    agent.update(batch, rng)
    started = time.perf_counter()
    for _ in range(3):
        agent.update(batch, rng)
    per_update = (time.perf_counter() - started) / 3
    # 50 episodes of at most max_steps steps, no updates during warmup
    updates = 50 * config.env.max_steps - hyper.warmup_steps
    assert per_update * updates < 20 * 60


def test_entropy_alone_raises_log_std(batch):
    actor = build_actor("(6,VQA(4 layers),(1,1))", rng=np.random.default_rng(3))
    actor.params["head.log_std"] = np.full(2, -2.0)
    critics = [build_critic("(8,16,1)"), build_critic("(8,16,1)")]
    state = AdamState.fresh(actor.n_params)
    hyper = SacHyperparams(lr=1e-2)
    noise = np.random.default_rng(4)
    trail = [actor.params["head.log_std"].copy()]
    for _ in range(15):
        actor_update(batch, critics, actor, state, hyper, noise.standard_normal((len(batch), 2)))
        trail.append(actor.params["head.log_std"].copy())
    assert np.all(np.diff(np.array(trail), axis=0) > 0)
