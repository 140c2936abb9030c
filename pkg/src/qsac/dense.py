from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from qsac.utils import check_finite

ACTIVATIONS = ("linear", "relu")


@dataclass
class DenseLayer:
    """Affine map followed by an activation; weights are (out_dim, in_dim)"""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(f"Inconsistent layer shapes: weights {self.weights.shape}, bias {self.bias.shape}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    @classmethod
    def initial(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        """Weights uniform in [-1/sqrt(in_dim), 1/sqrt(in_dim)], zero bias."""
        bound = 1.0 / np.sqrt(in_dim)
        return cls(
            weights=rng.uniform(-bound, bound, size=(out_dim, in_dim)),
            bias=np.zeros(out_dim),
            activation=activation,
        )

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, activation: str = "linear") -> "DenseLayer":
        return cls(weights=np.zeros((out_dim, in_dim)), bias=np.zeros(out_dim), activation=activation)


@dataclass
class ForwardCache:
    """Inputs and pre-activations recorded by forward(), consumed by backward()"""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    shapes: Tuple[Tuple[int, int], ...] = ()


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else z


def forward(layers: Sequence[DenseLayer], x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Run the affine/activation chain on a vector or a (batch, in_dim) array."""
    x = np.asarray(x, dtype=float)
    if layers and x.shape[-1] != layers[0].in_dim:
        raise ValueError(f"Input width {x.shape[-1]} does not match first layer in_dim {layers[0].in_dim}")
    cache = ForwardCache(shapes=tuple(layer.weights.shape for layer in layers))
    for layer in layers:
        if x.shape[-1] != layer.in_dim:
            raise ValueError(f"Layer expects width {layer.in_dim}, got {x.shape[-1]}")
        z = x @ layer.weights.T + layer.bias
        cache.inputs.append(x)
        cache.pre_activations.append(z)
        x = _activate(z, layer.activation)
    return x, cache


def backward(
    layers: Sequence[DenseLayer], cache: ForwardCache, upstream: np.ndarray
) -> Tuple[List[Tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Gradients of a loss with d(loss)/d(output) = upstream.

    Returns [(d_weights, d_bias)] per layer (summed over a batch) and d(loss)/d(input).
    """
    if cache.shapes != tuple(layer.weights.shape for layer in layers) or len(cache.inputs) != len(layers):
        raise ValueError("Forward cache does not belong to these layers")
    grad = np.asarray(upstream, dtype=float)
    if layers and grad.shape != cache.pre_activations[-1].shape:
        raise ValueError(f"Upstream shape {grad.shape} does not match output shape {cache.pre_activations[-1].shape}")
    grads: List[Tuple[np.ndarray, np.ndarray]] = []
    for layer, x, z in zip(reversed(layers), reversed(cache.inputs), reversed(cache.pre_activations)):
        if layer.activation == "relu":
            grad = grad * (z > 0)
        if grad.ndim == 1:
            d_weights, d_bias = np.outer(grad, x), grad.copy()
        else:
            d_weights, d_bias = grad.T @ x, grad.sum(axis=0)
        grads.append((d_weights, d_bias))
        grad = grad @ layer.weights
    grads.reverse()
    return grads, grad


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int) -> "AdamState":
        return cls(first_moment=np.zeros(size), second_moment=np.zeros(size))


def adam_update(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected Adam descent step; mutates `state`, returns the new parameters."""
    params, grads = np.asarray(params, dtype=float), np.asarray(grads, dtype=float)
    if not params.shape == grads.shape == state.first_moment.shape:
        raise ValueError(
            f"Adam shape mismatch: params {params.shape}, grads {grads.shape}, state {state.first_moment.shape}"
        )
    check_finite(f"gradients at optimizer step {state.step_count + 1}", grads)
    state.step_count += 1
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads**2
    m_hat = state.first_moment / (1.0 - state.beta1**state.step_count)
    v_hat = state.second_moment / (1.0 - state.beta2**state.step_count)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
