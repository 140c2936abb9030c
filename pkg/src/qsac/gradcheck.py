"""
Gradient cross-checks: parameter-shift against adjoint against central finite differences
on random circuits, and backpropagation through dense -> circuit -> dense networks.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from qsac.networks import CriticNetwork, parse_architecture
from qsac.quantum import CircuitParams, CircuitSpec, grad_adjoint, grad_parameter_shift, run_circuit
from qsac.utils import log, spawn_generators

FD_STEP = 1e-5
SHIFT_TOLERANCE = 1e-8
FD_TOLERANCE = 1e-6
NETWORK_TOLERANCE = 1e-5


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = h
        grad.flat[i] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


@dataclass
class TriangleResult:
    cases: int
    shift_vs_adjoint: float
    shift_vs_fd: float
    adjoint_vs_fd: float

    @property
    def passed(self) -> bool:
        return (
            self.shift_vs_adjoint <= SHIFT_TOLERANCE
            and self.shift_vs_fd <= FD_TOLERANCE
            and self.adjoint_vs_fd <= FD_TOLERANCE
        )


def random_circuit(rng: np.random.Generator, max_qubits: int = 6, max_layers: int = 5):
    spec = CircuitSpec(n_qubits=int(rng.integers(1, max_qubits + 1)), n_layers=int(rng.integers(1, max_layers + 1)))
    params = CircuitParams.initial(spec, rng)
    params.encode_weights = rng.uniform(0.5, 1.5, size=params.encode_weights.shape)
    x = rng.uniform(-1.0, 1.0, size=spec.n_qubits)
    upstream = rng.normal(size=spec.n_qubits)
    return spec, params.flatten(), x, upstream


def circuit_gradient_triangle(n_cases: int = 50, seed: int = 0, max_qubits: int = 6, max_layers: int = 5):
    """Max-abs disagreement between the three circuit gradient estimates over random circuits."""
    rngs = spawn_generators(seed, n_cases)
    worst = np.zeros(3)
    for rng in rngs:
        spec, flat, x, upstream = random_circuit(rng, max_qubits, max_layers)
        shift = grad_parameter_shift(spec, flat, x, upstream)
        adjoint, _ = grad_adjoint(spec, flat, x, upstream)
        fd = central_difference(lambda p: float(upstream @ run_circuit(spec, p, x)), flat)
        errors = [np.max(np.abs(shift - adjoint)), np.max(np.abs(shift - fd)), np.max(np.abs(adjoint - fd))]
        worst = np.maximum(worst, errors)
        log.debug(f"{spec.n_qubits} qubits, {spec.n_layers} layers: errors {errors}")
    return TriangleResult(n_cases, *map(float, worst))


def network_gradient_check(n_cases: int = 20, seed: int = 0, architecture: str = "(8,4,VQA(2 layers),3,1)") -> float:
    """Worst relative error of backpropagated critic gradients against finite differences."""
    arch = parse_architecture(architecture, "critic", "(linear,relu,linear)")
    worst = 0.0
    for rng in spawn_generators(seed, n_cases):
        critic = CriticNetwork(arch, rng)
        obs = rng.uniform(-1.0, 1.0, size=(3, arch.obs_dim))
        actions = rng.uniform(-1000.0, 1000.0, size=(3, arch.action_dim))
        weights = rng.normal(size=3)
        _, cache = critic.forward_batch(obs, actions)
        grads, _, _ = critic.backward_batch(cache, weights)
        analytic = critic.flatten_grads(grads)

        shadow = critic.copy()

        def loss(flat):
            shadow.load_flat(flat)
            return float(weights @ shadow.forward_batch(obs, actions)[0])

        numeric = central_difference(loss, critic.flat())
        error = np.max(np.abs(analytic - numeric)) / max(1.0, np.max(np.abs(numeric)))
        worst = max(worst, float(error))
    return worst
