"""
Soft Actor-Critic with a fixed entropy coefficient, twin critics and polyak-averaged targets.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from qsac.dense import AdamState, adam_update
from qsac.environment import ArmEnv, EnvConfig
from qsac.exceptions import BufferNotReadyError, ConfigurationError, DivergenceError
from qsac.networks import (
    ActorNetwork,
    CriticNetwork,
    build_actor,
    build_critic,
    mean_action,
    sample_action,
    sample_action_backward,
)
from qsac.utils import check_finite, log, spawn_generators

STREAMS = ("init", "env", "warmup", "noise", "replay")


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: float


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """FIFO ring of transitions; storage grows by doubling up to `capacity`."""

    def __init__(self, capacity: int = 1_000_000, obs_dim: int = 6, action_dim: int = 2):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.size = 0
        self._next = 0
        self._obs_dim, self._action_dim = obs_dim, action_dim
        self._allocate(min(capacity, 1024))

    def _allocate(self, rows: int) -> None:
        old = getattr(self, "_storage", None)
        self._storage = {
            "obs": np.zeros((rows, self._obs_dim)),
            "actions": np.zeros((rows, self._action_dim)),
            "rewards": np.zeros(rows),
            "next_obs": np.zeros((rows, self._obs_dim)),
            "dones": np.zeros(rows),
        }
        if old is not None:
            for key, values in old.items():
                self._storage[key][: len(values)] = values

    def __len__(self) -> int:
        return self.size

    def push(self, transition: Transition) -> "ReplayBuffer":
        rows = len(self._storage["rewards"])
        if self._next == rows and rows < self.capacity:
            self._allocate(min(2 * rows, self.capacity))
        i = self._next
        self._storage["obs"][i] = transition.obs
        self._storage["actions"][i] = transition.action
        self._storage["rewards"][i] = transition.reward
        self._storage["next_obs"][i] = transition.next_obs
        self._storage["dones"][i] = transition.done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return self

    def _rows(self, index: np.ndarray) -> Batch:
        return Batch(**{key: values[index].copy() for key, values in self._storage.items()})

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draw with replacement."""
        if self.size < batch_size:
            raise BufferNotReadyError(f"Replay holds {self.size} transitions, need {batch_size}")
        return self._rows(rng.integers(0, self.size, size=batch_size))

    def contents(self) -> Batch:
        """Stored transitions, oldest first."""
        start = self._next if self.size == self.capacity else 0
        return self._rows((start + np.arange(self.size)) % self.capacity)


def buffer_push(buffer: ReplayBuffer, transition: Transition) -> ReplayBuffer:
    return buffer.push(transition)


def buffer_sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(batch_size, rng)


@dataclass
class SacHyperparams:
    gamma: float = 0.99
    entropy_alpha: float = 0.2
    lr: float = 0.0003
    rho: float = 0.995
    batch_size: int = 64
    warmup_steps: int = 1000
    max_episodes: int = 5000
    memory_size: int = 1_000_000
    updates_per_step: int = 1
    bootstrap_on_truncation: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("gamma", "rho"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if min(self.batch_size, self.memory_size, self.updates_per_step) < 1:
            raise ConfigurationError("batch_size, memory_size and updates_per_step must be positive")


def compute_targets(
    batch: Batch, actor: ActorNetwork, target_critics: Sequence[CriticNetwork], hyper: SacHyperparams, noise
) -> np.ndarray:
    """y = r + gamma (1 - d) (min_i Q_targ_i(s', a') - alpha log pi(a'|s')), a' sampled at s'."""
    mean, log_std, _ = actor.forward_batch(batch.next_obs)
    next_actions, next_log_prob = sample_action(mean, log_std, noise, target_critics[0].max_torque)
    q_next = np.minimum(*(critic.forward_batch(batch.next_obs, next_actions)[0] for critic in target_critics))
    y = batch.rewards + hyper.gamma * (1.0 - batch.dones) * (q_next - hyper.entropy_alpha * next_log_prob)
    check_finite("bootstrap targets", y)
    return y


def critic_update(
    batch: Batch, y: np.ndarray, critics: Sequence[CriticNetwork], states: Sequence[AdamState], hyper: SacHyperparams
) -> List[float]:
    """One Adam step per critic on mean((Q - y)^2); returns the pre-step losses."""
    losses = []
    for critic, state in zip(critics, states):
        q, cache = critic.forward_batch(batch.obs, batch.actions)
        residual = q - y
        losses.append(float(np.mean(residual**2)))
        grads, _, _ = critic.backward_batch(cache, 2.0 * residual / len(batch))
        critic.load_flat(adam_update(critic.flat(), critic.flatten_grads(grads), state, hyper.lr))
    return losses


def actor_objective(batch: Batch, actor: ActorNetwork, critics: Sequence[CriticNetwork], hyper, noise):
    """Actor loss mean(alpha log pi - min_i Q_i) and its gradient over the flattened actor parameters."""
    mean, log_std, cache = actor.forward_batch(batch.obs)
    max_torque = critics[0].max_torque
    actions, log_prob = sample_action(mean, log_std, noise, max_torque)
    (q1, cache1), (q2, cache2) = (critic.forward_batch(batch.obs, actions) for critic in critics)
    first = q1 <= q2
    n = len(batch)
    loss = float(np.mean(hyper.entropy_alpha * log_prob - np.where(first, q1, q2)))
    weight = first.astype(float)
    _, _, d_action1 = critics[0].backward_batch(cache1, -weight / n)
    _, _, d_action2 = critics[1].backward_batch(cache2, -(1.0 - weight) / n)
    d_mean, d_log_std = sample_action_backward(
        mean, log_std, noise, d_action1 + d_action2, np.full(n, hyper.entropy_alpha / n), max_torque
    )
    return loss, actor.flatten_grads(actor.backward_batch(cache, d_mean, d_log_std))


def actor_update(
    batch: Batch, critics: Sequence[CriticNetwork], actor: ActorNetwork, state: AdamState, hyper, noise
) -> float:
    """One Adam step on the actor with the critics held fixed; returns the pre-step loss."""
    loss, grads = actor_objective(batch, actor, critics, hyper, noise)
    actor.load_flat(adam_update(actor.flat(), grads, state, hyper.lr))
    return loss


def soft_update(target_params: np.ndarray, online_params: np.ndarray, rho: float) -> np.ndarray:
    """rho * target + (1 - rho) * online"""
    target_params, online_params = np.asarray(target_params, dtype=float), np.asarray(online_params, dtype=float)
    if target_params.shape != online_params.shape:
        raise ValueError(f"Cannot blend shapes {target_params.shape} and {online_params.shape}")
    return rho * target_params + (1.0 - rho) * online_params


class SacAgent:
    """Actor, twin critics, their targets and optimizer states."""

    def __init__(self, actor: ActorNetwork, critics: Sequence[CriticNetwork], hyper: SacHyperparams):
        if len(critics) != 2:
            raise ValueError(f"SAC uses two critics, got {len(critics)}")
        self.actor = actor
        self.critics = list(critics)
        self.target_critics = [critic.copy() for critic in self.critics]
        self.hyper = hyper
        self.actor_state = AdamState.fresh(actor.n_params)
        self.critic_states = [AdamState.fresh(critic.n_params) for critic in self.critics]

    @classmethod
    def build(
        cls,
        actor_architecture: str,
        critic_architecture: str,
        hyper: SacHyperparams,
        seed: int,
        actor_activations: Optional[str] = None,
        critic_activations: Optional[str] = None,
        max_torque: float = 1000.0,
    ) -> "SacAgent":
        rng = seed_streams(seed)["init"]
        actor = build_actor(actor_architecture, actor_activations, rng)
        critics = [build_critic(critic_architecture, critic_activations, rng, max_torque) for _ in range(2)]
        return cls(actor, critics, hyper)

    @property
    def max_torque(self) -> float:
        return self.critics[0].max_torque

    def act(self, obs: np.ndarray, noise: np.ndarray) -> np.ndarray:
        mean, log_std, _ = self.actor.forward_batch(obs)
        action, _ = sample_action(mean[0], log_std[0], noise, self.max_torque)
        return action

    def act_deterministic(self, obs: np.ndarray) -> np.ndarray:
        mean, _, _ = self.actor.forward_batch(obs)
        return mean_action(mean[0], self.max_torque)

    def update(self, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
        noise_shape = (len(batch), self.actor.architecture.action_dim)
        y = compute_targets(batch, self.actor, self.target_critics, self.hyper, rng.standard_normal(noise_shape))
        critic_losses = critic_update(batch, y, self.critics, self.critic_states, self.hyper)
        actor_loss = actor_update(
            batch, self.critics, self.actor, self.actor_state, self.hyper, rng.standard_normal(noise_shape)
        )
        for target, online in zip(self.target_critics, self.critics):
            target.load_flat(soft_update(target.flat(), online.flat(), self.hyper.rho))
        return {"critic1": critic_losses[0], "critic2": critic_losses[1], "actor": actor_loss}

    def networks(self) -> Dict[str, object]:
        return {
            "actor": self.actor,
            "critic1": self.critics[0],
            "critic2": self.critics[1],
            "target1": self.target_critics[0],
            "target2": self.target_critics[1],
        }

    def parameter_groups(self) -> Dict[str, np.ndarray]:
        return {
            f"{prefix}.{name}": values for prefix, net in self.networks().items() for name, values in net.params.items()
        }

    def load_parameter_groups(self, groups: Dict[str, np.ndarray]) -> None:
        for prefix, net in self.networks().items():
            for name, values in net.params.items():
                key = f"{prefix}.{name}"
                if key not in groups:
                    raise ValueError(f"Checkpoint is missing parameter group {key!r}")
                if groups[key].shape != values.shape:
                    raise ValueError(f"Group {key!r} has shape {groups[key].shape}, expected {values.shape}")
                net.params[name] = np.array(groups[key], dtype=float)


@dataclass(frozen=True)
class EpisodeRecord:
    run_id: str
    seed: int
    episode: int
    steps: int
    episode_return: float
    solved: bool
    wall_ms: float


def seed_streams(seed: int) -> Dict[str, np.random.Generator]:
    """Named independent random streams for one training run."""
    return dict(zip(STREAMS, spawn_generators(seed, len(STREAMS))))


def train_run(
    env_config: EnvConfig,
    agent: SacAgent,
    seed: int,
    episode_callback: Optional[Callable[[EpisodeRecord], None]] = None,
    checkpoint_callback: Optional[Callable[[SacAgent, int], None]] = None,
    max_episodes: Optional[int] = None,
    run_id: str = "",
    record_wall_time: bool = True,
) -> List[EpisodeRecord]:
    """Interleave environment steps with SAC updates; one record per episode.

    The first `warmup_steps` actions are uniform random torques and no update happens
    before then.
    """
    hyper = agent.hyper
    streams = seed_streams(seed)
    env = ArmEnv(env_config, streams["env"])
    arch = agent.actor.architecture
    replay = ReplayBuffer(hyper.memory_size, arch.obs_dim, arch.action_dim)
    episodes = hyper.max_episodes if max_episodes is None else max_episodes
    records: List[EpisodeRecord] = []
    total_steps = 0
    torque = env_config.max_torque

    for episode in range(1, episodes + 1):
        started = time.perf_counter()
        obs = env.reset()
        episode_return, result = 0.0, None
        try:
            while result is None or not result.done:
                if total_steps < hyper.warmup_steps:
                    action = streams["warmup"].uniform(-torque, torque, size=arch.action_dim)
                else:
                    action = agent.act(obs, streams["noise"].standard_normal(arch.action_dim))
                result = env.step(action)
                terminal = result.reached or not hyper.bootstrap_on_truncation
                replay.push(Transition(obs, action, result.reward, result.observation, float(result.done and terminal)))
                obs = result.observation
                episode_return += result.reward
                total_steps += 1
                if total_steps > hyper.warmup_steps and len(replay) >= hyper.batch_size:
                    for _ in range(hyper.updates_per_step):
                        losses = agent.update(replay.sample(hyper.batch_size, streams["replay"]), streams["noise"])
                    if log.isEnabledFor(logging.DEBUG):
                        log.debug(f"step {total_steps}: " + ", ".join(f"{k} loss {v:.4g}" for k, v in losses.items()))
        except DivergenceError as e:
            log.error(f"Run {run_id or seed} diverged in episode {episode}: {e}")
            raise

        wall_ms = (time.perf_counter() - started) * 1000.0 if record_wall_time else 0.0
        record = EpisodeRecord(run_id, seed, episode, result.steps_used, episode_return, result.reached, wall_ms)
        records.append(record)
        if episode_callback is not None:
            episode_callback(record)
        if checkpoint_callback is not None and hyper.checkpoint_every and episode % hyper.checkpoint_every == 0:
            checkpoint_callback(agent, episode)
        if episode % 100 == 0:
            recent = records[-100:]
            log.info(
                f"Run {run_id or seed}: episode {episode}, mean return (last 100) "
                f"{np.mean([r.episode_return for r in recent]):.3f}"
            )
    return records
