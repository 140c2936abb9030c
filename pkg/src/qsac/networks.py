"""
Actor and critic networks: an optional dense block, an optional variational circuit and
a dense block, then (for actors) a mean / log-std head pair.

Architectures are written in the table notation used by the presets, e.g.

    (6,7)(8,(1,1))              dense 6->7, dense 7->8, two dense heads
    (8,64)(64,64)(64,1)         groups merge where boundary widths agree: 8->64->64->1
    (6,VQA(4 layers),(1,1))     6-qubit circuit read directly by the heads
    (8,8,VQA(20 layers),1)      dense 8->8, 8-qubit circuit, dense 8->1
"""

import math
import re
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from qsac import dense
from qsac.dense import DenseLayer
from qsac.exceptions import ConfigurationError
from qsac.quantum import CircuitParams, CircuitSpec, CircuitTrace, adjoint_gradients, expectations, trace_batch
from qsac.utils import check_finite

OBS_DIM = 6
ACTION_DIM = 2
MAX_TORQUE = 1000.0
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
EPS_SQUASH = 1e-6

VQA_REGEX = re.compile(r"VQA\((\d+)layers?\)")
GROUP_REGEX = re.compile(r"\(([^()]*)\)")
HEADS_TOKEN = "(1,1)"


@dataclass(frozen=True)
class DenseShape:
    in_dim: int
    out_dim: int
    activation: str = "linear"

    @property
    def n_params(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


@dataclass(frozen=True)
class ArchitectureConfig:
    """Dimensional chain of a network: pre_layers -> vqc -> post_layers -> heads.

    `heads` is "dense" for two dense heads, "projection" when the heads read a circuit
    register directly (weight-only mean projection + state-independent log-std), or
    None for critics.
    """

    kind: str
    input_dim: int
    pre_layers: Tuple[DenseShape, ...] = ()
    vqc: Optional[CircuitSpec] = None
    post_layers: Tuple[DenseShape, ...] = ()
    heads: Optional[str] = None
    obs_dim: int = OBS_DIM
    action_dim: int = ACTION_DIM
    text: str = field(default="", compare=False)

    @property
    def feature_dim(self) -> int:
        if self.post_layers:
            return self.post_layers[-1].out_dim
        if self.vqc is not None:
            return self.vqc.n_qubits
        if self.pre_layers:
            return self.pre_layers[-1].out_dim
        return self.input_dim

    @property
    def n_params(self) -> int:
        count = sum(layer.n_params for layer in self.pre_layers + self.post_layers)
        if self.vqc is not None:
            count += self.vqc.n_params
        if self.heads == "dense":
            count += 2 * (self.feature_dim * self.action_dim + self.action_dim)
        elif self.heads == "projection":
            count += self.feature_dim * self.action_dim + self.action_dim
        return count


def parse_activations(text: str) -> Tuple[str, ...]:
    """'(linear,relu,linear)' -> ('linear', 'relu', 'linear')"""
    body = text.replace(" ", "").strip()
    if not (body.startswith("(") and body.endswith(")")):
        raise ConfigurationError(f"Activation list must be parenthesized: {text!r}")
    return tuple(item for item in body[1:-1].split(",") if item)


def tokenize_architecture(text: str) -> List[str]:
    compact = text.replace(" ", "")
    compact = VQA_REGEX.sub(lambda match: f"Q{match.group(1)}", compact)
    compact = compact.replace(HEADS_TOKEN, "H")
    groups = GROUP_REGEX.findall(compact)
    if not groups or "".join(f"({group})" for group in groups) != compact:
        raise ConfigurationError(f"Malformed architecture string: {text!r}")
    chain: List[str] = []
    for group in groups:
        items = [item for item in group.split(",") if item]
        if chain and items and items[0] == chain[-1] and items[0].isdigit():
            items = items[1:]
        chain.extend(items)
    return chain


def parse_architecture(
    text: str,
    role: str,
    activations: Optional[str] = None,
    obs_dim: int = OBS_DIM,
    action_dim: int = ACTION_DIM,
) -> ArchitectureConfig:
    """Build an ArchitectureConfig from table notation for role 'actor' or 'critic'.

    Activation entries align with the last N dense stages (the head pair is one stage).
    """
    if role not in ("actor", "critic"):
        raise ValueError(f"role must be 'actor' or 'critic', got {role!r}")
    chain = tokenize_architecture(text)
    if not chain or not chain[0].isdigit():
        raise ConfigurationError(f"Architecture {text!r} must start with its input width")
    expected_input = obs_dim if role == "actor" else obs_dim + action_dim
    width = int(chain[0])
    if width != expected_input:
        raise ConfigurationError(f"{role} architecture {text!r} takes width {width}, expected {expected_input}")

    pre: List[Tuple[int, int]] = []
    post: List[Tuple[int, int]] = []
    vqc: Optional[CircuitSpec] = None
    heads: Optional[str] = None
    for position, token in enumerate(chain[1:], start=1):
        if heads is not None:
            raise ConfigurationError(f"Nothing may follow the head pair in {text!r}")
        if token.isdigit():
            (post if vqc is not None else pre).append((width, int(token)))
            width = int(token)
        elif token.startswith("Q"):
            if vqc is not None:
                raise ConfigurationError(f"Only one VQA block is supported, found two in {text!r}")
            vqc = CircuitSpec(n_qubits=width, n_layers=int(token[1:]))
        elif token == "H":
            heads = "projection" if vqc is not None and not post else "dense"
        else:
            raise ConfigurationError(f"Unknown token {token!r} at position {position} of {text!r}")

    if role == "actor" and heads is None:
        raise ConfigurationError(f"Actor architecture {text!r} must end with the head pair (1,1)")
    if role == "critic" and (heads is not None or width != 1):
        raise ConfigurationError(f"Critic architecture {text!r} must end with a single output")

    n_stages = len(pre) + len(post) + (1 if heads else 0)
    if activations is None:
        acts = ("relu",) * (n_stages - 1) + ("linear",)
    else:
        listed = parse_activations(activations)
        if len(listed) < n_stages:
            raise ConfigurationError(f"{activations!r} names {len(listed)} activations for {n_stages} stages")
        acts = listed[len(listed) - n_stages :]

    if heads and acts[-1] != "linear":
        raise ConfigurationError(f"The head pair of {text!r} is linear, got activation {acts[-1]!r}")
    shapes = [DenseShape(i, o, a) for (i, o), a in zip(pre + post, acts)]
    return ArchitectureConfig(
        kind="hybrid" if vqc is not None else "classical",
        input_dim=expected_input,
        pre_layers=tuple(shapes[: len(pre)]),
        vqc=vqc,
        post_layers=tuple(shapes[len(pre) :]),
        heads=heads,
        obs_dim=obs_dim,
        action_dim=action_dim,
        text=text,
    )


@dataclass
class TrunkCache:
    pre: dense.ForwardCache
    post: dense.ForwardCache
    circuit_input: Optional[np.ndarray] = None
    circuit: Optional[CircuitTrace] = None


class HybridNetwork(ABC):
    """Parameter container and forward/backward plumbing shared by actors and critics.

    Parameters live in an ordered mapping of named groups; layers are views over them.
    """

    def __init__(self, architecture: ArchitectureConfig, rng: Optional[np.random.Generator] = None):
        self.architecture = architecture
        self.params: Dict[str, np.ndarray] = OrderedDict()
        for prefix, shapes in (("pre", architecture.pre_layers), ("post", architecture.post_layers)):
            for index, shape in enumerate(shapes):
                layer = (
                    DenseLayer.initial(shape.in_dim, shape.out_dim, shape.activation, rng)
                    if rng is not None
                    else DenseLayer.zeros(shape.in_dim, shape.out_dim, shape.activation)
                )
                self.params[f"{prefix}.{index}.weights"] = layer.weights
                self.params[f"{prefix}.{index}.bias"] = layer.bias
        if architecture.vqc is not None:
            if rng is not None:
                circuit = CircuitParams.initial(architecture.vqc, rng)
            else:
                circuit = CircuitParams.zeros(architecture.vqc)
            self.params["vqc"] = circuit.flatten()
        self._init_output(rng)

    @abstractmethod
    def _init_output(self, rng: Optional[np.random.Generator]) -> None:
        """Add the output parameter groups"""

    # --- parameter views ---

    def _layers(self, prefix: str, shapes: Sequence[DenseShape]) -> List[DenseLayer]:
        return [
            DenseLayer(self.params[f"{prefix}.{i}.weights"], self.params[f"{prefix}.{i}.bias"], shape.activation)
            for i, shape in enumerate(shapes)
        ]

    @property
    def n_params(self) -> int:
        return int(sum(group.size for group in self.params.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([group.ravel() for group in self.params.values()])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"Expected {self.n_params} parameters, got shape {flat.shape}")
        offset = 0
        for name, group in self.params.items():
            self.params[name] = flat[offset : offset + group.size].reshape(group.shape).copy()
            offset += group.size

    def flatten_grads(self, grads: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[name].ravel() for name in self.params])

    def copy(self):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = OrderedDict((name, group.copy()) for name, group in self.params.items())
        return clone

    # --- trunk ---

    def _trunk_forward(self, x: np.ndarray) -> Tuple[np.ndarray, TrunkCache]:
        arch = self.architecture
        h, pre_cache = dense.forward(self._layers("pre", arch.pre_layers), x)
        circuit_input = circuit = None
        if arch.vqc is not None:
            circuit_input = h
            circuit = trace_batch(arch.vqc, self.params["vqc"], h)
            h = expectations(circuit.final, arch.vqc.n_qubits)
        out, post_cache = dense.forward(self._layers("post", arch.post_layers), h)
        return out, TrunkCache(pre=pre_cache, post=post_cache, circuit_input=circuit_input, circuit=circuit)

    def _trunk_backward(self, cache: TrunkCache, upstream: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        arch = self.architecture
        grads: Dict[str, np.ndarray] = {}
        post_grads, grad = dense.backward(self._layers("post", arch.post_layers), cache.post, upstream)
        if arch.vqc is not None:
            grads["vqc"], grad = adjoint_gradients(
                arch.vqc, self.params["vqc"], cache.circuit_input, cache.circuit, grad
            )
        pre_grads, grad = dense.backward(self._layers("pre", arch.pre_layers), cache.pre, grad)
        for prefix, layer_grads in (("pre", pre_grads), ("post", post_grads)):
            for index, (d_weights, d_bias) in enumerate(layer_grads):
                grads[f"{prefix}.{index}.weights"] = d_weights
                grads[f"{prefix}.{index}.bias"] = d_bias
        return grads, grad


@dataclass
class ActorCache:
    trunk: TrunkCache
    features: np.ndarray
    raw_log_std: np.ndarray


class ActorNetwork(HybridNetwork):
    """Maps observations to the mean and clamped log-std of a Gaussian over pre-squash actions"""

    def _init_output(self, rng):
        arch = self.architecture
        width, actions = arch.feature_dim, arch.action_dim
        heads = ("mean", "log_std") if arch.heads == "dense" else ("mean",)
        for name in heads:
            layer = (
                DenseLayer.initial(width, actions, "linear", rng)
                if rng is not None
                else DenseLayer.zeros(width, actions)
            )
            self.params[f"head.{name}.weights"] = layer.weights
            if arch.heads == "dense":
                self.params[f"head.{name}.bias"] = layer.bias
        if arch.heads == "projection":
            self.params["head.log_std"] = np.zeros(actions)

    def _head(self, name: str, features: np.ndarray) -> np.ndarray:
        out = features @ self.params[f"head.{name}.weights"].T
        if self.architecture.heads == "dense":
            out = out + self.params[f"head.{name}.bias"]
        return out

    def forward_batch(self, obs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, ActorCache]:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        features, trunk = self._trunk_forward(obs)
        mean = self._head("mean", features)
        if self.architecture.heads == "dense":
            raw_log_std = self._head("log_std", features)
        else:
            raw_log_std = np.broadcast_to(self.params["head.log_std"], mean.shape).copy()
        check_finite("actor output", mean, raw_log_std)
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, ActorCache(trunk=trunk, features=features, raw_log_std=raw_log_std)

    def backward_batch(self, cache: ActorCache, d_mean: np.ndarray, d_log_std: np.ndarray) -> Dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(mean) and d(loss)/d(clamped log-std), both (batch, action_dim)."""
        in_range = (cache.raw_log_std >= LOG_STD_MIN) & (cache.raw_log_std <= LOG_STD_MAX)
        d_raw = d_log_std * in_range
        features = cache.features
        grads: Dict[str, np.ndarray] = {"head.mean.weights": d_mean.T @ features}
        d_features = d_mean @ self.params["head.mean.weights"]
        if self.architecture.heads == "dense":
            grads["head.mean.bias"] = d_mean.sum(axis=0)
            grads["head.log_std.weights"] = d_raw.T @ features
            grads["head.log_std.bias"] = d_raw.sum(axis=0)
            d_features = d_features + d_raw @ self.params["head.log_std.weights"]
        else:
            grads["head.log_std"] = d_raw.sum(axis=0)
        trunk_grads, _ = self._trunk_backward(cache.trunk, d_features)
        grads.update(trunk_grads)
        return grads


@dataclass
class CriticCache:
    trunk: TrunkCache


class CriticNetwork(HybridNetwork):
    """Q(obs, action); the action enters scaled by 1 / max_torque"""

    def __init__(self, architecture, rng=None, max_torque: float = MAX_TORQUE):
        self.max_torque = max_torque
        super().__init__(architecture, rng)

    def _init_output(self, rng):
        pass

    def _inputs(self, obs, action) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        action = np.atleast_2d(np.asarray(action, dtype=float))
        return np.concatenate([obs, action / self.max_torque], axis=1)

    def forward_batch(self, obs: np.ndarray, action: np.ndarray) -> Tuple[np.ndarray, CriticCache]:
        out, trunk = self._trunk_forward(self._inputs(obs, action))
        check_finite("critic output", out)
        return out[:, 0], CriticCache(trunk=trunk)

    def backward_batch(
        self, cache: CriticCache, d_q: np.ndarray
    ) -> Tuple[Dict[str, np.ndarray], np.ndarray, np.ndarray]:
        """(parameter gradients, d/d obs, d/d action) given d(loss)/dQ of shape (batch,)."""
        grads, d_input = self._trunk_backward(cache.trunk, np.reshape(d_q, (-1, 1)))
        obs_dim = self.architecture.obs_dim
        return grads, d_input[:, :obs_dim], d_input[:, obs_dim:] / self.max_torque


# --- single-sample operations -----------------------------------------------------------------------------------


def actor_forward(actor: ActorNetwork, obs: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    mean, log_std, _ = actor.forward_batch(np.asarray(obs, dtype=float).reshape(1, -1))
    return mean[0], log_std[0]


def critic_forward(critic: CriticNetwork, obs: Sequence[float], action: Sequence[float]) -> float:
    q, _ = critic.forward_batch(obs, action)
    return float(q[0])


def sample_action(mean, log_std, noise, max_torque: float = MAX_TORQUE) -> Tuple[np.ndarray, np.ndarray]:
    """Reparameterized tanh-squashed Gaussian sample.

    u = mean + exp(log_std) * noise, action = max_torque * tanh(u); log_prob is the
    Gaussian log-density of u minus sum(log(max_torque * (1 - tanh(u)^2) + eps)).
    Works on single vectors or (batch, action_dim) arrays.
    """
    mean, log_std, noise = (np.asarray(v, dtype=float) for v in (mean, log_std, noise))
    squashed = np.tanh(mean + np.exp(log_std) * noise)
    gaussian = -0.5 * noise**2 - log_std - 0.5 * math.log(2.0 * math.pi)
    correction = np.log(max_torque * (1.0 - squashed**2) + EPS_SQUASH)
    return max_torque * squashed, np.sum(gaussian - correction, axis=-1)


def sample_action_backward(
    mean, log_std, noise, d_action: np.ndarray, d_log_prob: np.ndarray, max_torque: float = MAX_TORQUE
) -> Tuple[np.ndarray, np.ndarray]:
    """Chain d(loss)/d(action) and d(loss)/d(log_prob) back to (d mean, d log_std)."""
    std = np.exp(log_std)
    squashed = np.tanh(mean + std * noise)
    slope = 1.0 - squashed**2
    d_log_prob = np.expand_dims(np.asarray(d_log_prob, dtype=float), -1)
    d_u = d_action * max_torque * slope + d_log_prob * (
        2.0 * max_torque * squashed * slope / (max_torque * slope + EPS_SQUASH)
    )
    return d_u, d_u * std * noise - d_log_prob


def mean_action(mean, max_torque: float = MAX_TORQUE) -> np.ndarray:
    """Deterministic policy: squash the mean."""
    return max_torque * np.tanh(np.asarray(mean, dtype=float))


def parameter_count(net) -> int:
    """Learnable scalars of a network or an architecture."""
    return int(net.n_params)


def build_actor(text: str, activations: Optional[str] = None, rng=None) -> ActorNetwork:
    return ActorNetwork(parse_architecture(text, "actor", activations), rng)


def build_critic(text: str, activations: Optional[str] = None, rng=None, max_torque: float = MAX_TORQUE):
    return CriticNetwork(parse_architecture(text, "critic", activations), rng, max_torque=max_torque)
