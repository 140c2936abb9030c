"""
Two-link planar arm hanging from a fixed pivot.

Angles are absolute, measured from the downward vertical; link i ends at
previous_joint + L * (sin angle, -cos angle). Both links are uniform rods. A positive
joint torque rotates its link toward decreasing angle.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from qsac.exceptions import ConfigurationError, EpisodeDoneError
from qsac.utils import log, wrap_angle

SOLVED_REWARD = 5.0


@dataclass(frozen=True)
class EnvConfig:
    link_mass: float = 0.01
    link_length: float = 0.5
    link_width: float = 0.1
    max_steps: int = 250
    fps: int = 50
    distance_threshold: float = 0.25
    max_joint_velocity: float = 2.5
    max_torque: float = 1000.0
    gravity: float = 9.81
    substeps: int = 20
    center: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in (
            "link_mass",
            "link_length",
            "link_width",
            "max_steps",
            "fps",
            "distance_threshold",
            "max_joint_velocity",
            "max_torque",
            "gravity",
            "substeps",
        ):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"Environment parameter {name} must be positive, got {getattr(self, name)}")

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    @property
    def reach(self) -> float:
        return 2.0 * self.link_length


@dataclass(frozen=True)
class ArmState:
    theta: float
    phi: float
    omega_theta: float
    omega_phi: float
    target: Tuple[float, float]
    step_index: int = 0
    done: bool = False


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    steps_used: int
    distance: float
    reached: bool


def forward_kinematics(theta: float, phi: float, length: float, center=(0.0, 0.0)) -> Tuple[float, float, float, float]:
    """(x_m, y_m, x_e, y_e): middle joint and end effector positions."""
    x_m = center[0] + length * math.sin(theta)
    y_m = center[1] - length * math.cos(theta)
    return x_m, y_m, x_m + length * math.sin(phi), y_m - length * math.cos(phi)


def end_effector(config: EnvConfig, state: ArmState) -> Tuple[float, float]:
    _, _, x_e, y_e = forward_kinematics(state.theta, state.phi, config.link_length, config.center)
    return x_e, y_e


def target_distance(config: EnvConfig, state: ArmState) -> float:
    x_e, y_e = end_effector(config, state)
    return math.hypot(state.target[0] - x_e, state.target[1] - y_e)


def sample_target(config: EnvConfig, rng: np.random.Generator) -> Tuple[float, float]:
    """Area-uniform point of the reachable disk, away from the hanging end effector."""
    cx, cy = config.center
    start_x, start_y = cx, cy - config.reach
    while True:
        angle = rng.uniform(0.0, 2.0 * math.pi)
        radius = config.reach * math.sqrt(rng.uniform())
        if radius < 1e-9:
            continue
        x, y = cx + radius * math.cos(angle), cy + radius * math.sin(angle)
        if math.hypot(x - start_x, y - start_y) > config.distance_threshold:
            return x, y


def reset_state(config: EnvConfig, rng: np.random.Generator) -> ArmState:
    """Arm hanging at rest with a freshly sampled target."""
    return ArmState(theta=0.0, phi=0.0, omega_theta=0.0, omega_phi=0.0, target=sample_target(config, rng))


def accelerations(config: EnvConfig, theta, phi, omega_theta, omega_phi, torque_m, torque_e) -> Tuple[float, float]:
    """Angular accelerations from the rigid-body equations of motion."""
    m, length, g = config.link_mass, config.link_length, config.gravity
    inertia = m * length * length
    s, c = math.sin(theta - phi), math.cos(theta - phi)
    m11, m12, m22 = 4.0 / 3.0 * inertia, 0.5 * inertia * c, inertia / 3.0
    rhs1 = -torque_m - 0.5 * inertia * s * omega_phi**2 - 1.5 * m * g * length * math.sin(theta)
    rhs2 = -torque_e + 0.5 * inertia * s * omega_theta**2 - 0.5 * m * g * length * math.sin(phi)
    det = m11 * m22 - m12 * m12
    return (m22 * rhs1 - m12 * rhs2) / det, (m11 * rhs2 - m12 * rhs1) / det


def mechanical_energy(config: EnvConfig, state: ArmState) -> float:
    """Kinetic plus potential energy, potential measured from the pivot height."""
    m, length, g = config.link_mass, config.link_length, config.gravity
    inertia = m * length * length
    wt, wp = state.omega_theta, state.omega_phi
    kinetic = 0.5 * (
        4.0 / 3.0 * inertia * wt**2
        + inertia / 3.0 * wp**2
        + inertia * math.cos(state.theta - state.phi) * wt * wp
    )
    potential = -m * g * length * (1.5 * math.cos(state.theta) + 0.5 * math.cos(state.phi))
    return kinetic + potential


def _clamp(value: float, bound: float) -> float:
    return max(-bound, min(bound, value))


def integrate(config: EnvConfig, state: ArmState, torque_m: float, torque_e: float) -> ArmState:
    """Advance one dt with semi-implicit Euler sub-steps, clamping velocities after each."""
    h = config.dt / config.substeps
    vmax = config.max_joint_velocity
    theta, phi, wt, wp = state.theta, state.phi, state.omega_theta, state.omega_phi
    for _ in range(config.substeps):
        at, ap = accelerations(config, theta, phi, wt, wp, torque_m, torque_e)
        wt = _clamp(wt + h * at, vmax)
        wp = _clamp(wp + h * ap, vmax)
        theta += h * wt
        phi += h * wp
    return replace(state, theta=wrap_angle(theta), phi=wrap_angle(phi), omega_theta=wt, omega_phi=wp)


def observe(config: EnvConfig, state: ArmState) -> np.ndarray:
    """(x_t, y_t, x_e, y_e, theta, phi)"""
    x_e, y_e = end_effector(config, state)
    return np.array([state.target[0], state.target[1], x_e, y_e, state.theta, state.phi])


def step_state(config: EnvConfig, state: ArmState, action: Sequence[float]) -> Tuple[ArmState, StepResult]:
    if state.done or state.step_index >= config.max_steps:
        raise EpisodeDoneError(f"Episode already finished after {state.step_index} steps; call reset first")
    torque_m, torque_e = (float(a) for a in action)
    if not (math.isfinite(torque_m) and math.isfinite(torque_e)):
        raise ValueError(f"Non-finite action {tuple(action)}")
    torque_m, torque_e = _clamp(torque_m, config.max_torque), _clamp(torque_e, config.max_torque)

    moved = integrate(config, state, torque_m, torque_e)
    distance = target_distance(config, moved)
    reached = distance <= config.distance_threshold
    steps_used = state.step_index + 1
    done = reached or steps_used == config.max_steps
    moved = replace(moved, step_index=steps_used, done=done)
    result = StepResult(
        observation=observe(config, moved),
        reward=SOLVED_REWARD if reached else -distance,
        done=done,
        steps_used=steps_used,
        distance=distance,
        reached=reached,
    )
    return moved, result


class ArmEnv:
    """Stateful wrapper for rollouts: reset() then step() until done."""

    def __init__(self, config: Optional[EnvConfig] = None, rng: Optional[np.random.Generator] = None):
        self.config = config or EnvConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        self.state: Optional[ArmState] = None

    def reset(self) -> np.ndarray:
        self.state = reset_state(self.config, self.rng)
        log.debug(f"New target at ({self.state.target[0]:.3f}, {self.state.target[1]:.3f})")
        return observe(self.config, self.state)

    def step(self, action: Sequence[float]) -> StepResult:
        if self.state is None:
            raise EpisodeDoneError("step() called before reset()")
        self.state, result = step_state(self.config, self.state, action)
        return result

    def observe(self) -> np.ndarray:
        if self.state is None:
            raise EpisodeDoneError("observe() called before reset()")
        return observe(self.config, self.state)
