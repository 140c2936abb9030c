"""
Closed-form controller that solves the arm environment without learning.

For a target at distance d_c from the pivot, the two links and the pivot-target segment
form an isosceles triangle; its two mirror images give two ideal configurations. The
controller picks the one whose first-link angle is closest to the start pose and drives
both links toward it with proportional torques.
"""

import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from qsac.environment import ArmState, EnvConfig, forward_kinematics, step_state
from qsac.exceptions import CalibrationError, DegenerateTargetError, UnreachableTargetError
from qsac.utils import TWO_PI, log, to_positive_angle

GAIN_LEVELS = (1e-2, 1e-1, 1.0, 10.0, 100.0)
REFINE_FACTORS = (1.0 / 3.0, 1.0, 3.0)
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class IdealConfig:
    theta_star: float
    phi_star: float
    delta: float


@dataclass(frozen=True)
class GainConstants:
    c1: float
    c2: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError(f"Gains must be positive, got c1={self.c1}, c2={self.c2}")


# calibrate_gains winner on 1000 targets
CALIBRATED_GAINS = GainConstants(c1=1.0, c2=0.1)


def polar_angle(dx: float, dy: float) -> float:
    """Direction of (dx, dy) as an arm angle in [0, 2pi): 0 points down, pi/2 along +x."""
    return to_positive_angle(math.atan2(dx, -dy))


def angular_distance(angle: float, reference: float) -> float:
    """pi - ||angle - reference| - pi|, in [0, pi]."""
    return math.pi - abs(abs(angle - reference) - math.pi)


def ideal_configurations(
    target: Sequence[float], center: Sequence[float] = (0.0, 0.0), length: float = 0.5, theta_0: float = 0.0
) -> Tuple[IdealConfig, IdealConfig]:
    """Both (theta*, phi*) pairs placing the end effector on the target."""
    dx, dy = target[0] - center[0], target[1] - center[1]
    d_c = math.hypot(dx, dy)
    if d_c == 0.0:
        raise DegenerateTargetError("Target coincides with the pivot; the ideal configuration is undefined")
    ratio = d_c / (2.0 * length)
    if ratio > 1.0 + TIE_TOLERANCE:
        raise UnreachableTargetError(f"Target at distance {d_c:.6f} is beyond the reach {2.0 * length:.6f}")
    alpha = math.acos(min(ratio, 1.0))
    beta = polar_angle(dx, dy)
    theta_0 = to_positive_angle(theta_0)
    configs = []
    for theta_star in ((beta - alpha + TWO_PI) % TWO_PI, (beta + alpha - TWO_PI) % TWO_PI):
        x_m, y_m, _, _ = forward_kinematics(theta_star, 0.0, length, center)
        phi_star = polar_angle(target[0] - x_m, target[1] - y_m)
        configs.append(IdealConfig(theta_star, phi_star, angular_distance(theta_star, theta_0)))
    return configs[0], configs[1]


def select_target_config(configs: Sequence[IdealConfig], theta_0: Optional[float] = None) -> IdealConfig:
    """The candidate closest to theta_0; the first one on ties."""
    first, second = configs
    if theta_0 is not None:
        theta_0 = to_positive_angle(theta_0)
        first = IdealConfig(first.theta_star, first.phi_star, angular_distance(first.theta_star, theta_0))
        second = IdealConfig(second.theta_star, second.phi_star, angular_distance(second.theta_star, theta_0))
    return second if second.delta < first.delta - TIE_TOLERANCE else first


def configuration_residual(config: IdealConfig, target, center=(0.0, 0.0), length: float = 0.5) -> float:
    _, _, x_e, y_e = forward_kinematics(config.theta_star, config.phi_star, length, center)
    return math.hypot(x_e - target[0], y_e - target[1])


def policy_action(
    state: ArmState, target_config: IdealConfig, gains: GainConstants, max_torque: float = 1000.0
) -> Tuple[float, float]:
    theta_star, phi_star = target_config.theta_star, target_config.phi_star
    d_theta = theta_star - to_positive_angle(state.theta)
    d_phi = phi_star - to_positive_angle(state.phi)
    torque_m = gains.c1 * np.sign(abs(d_theta) - math.pi) * d_theta
    if theta_star < math.pi:
        swing = theta_star < phi_star < theta_star + math.pi
    else:
        swing = theta_star - math.pi < phi_star < theta_star
    if swing:
        torque_e = -gains.c2 * d_phi
    else:
        torque_e = gains.c2 * np.sign(abs(d_phi) - math.pi) * d_phi
    return (
        float(np.clip(torque_m, -max_torque, max_torque)),
        float(np.clip(torque_e, -max_torque, max_torque)),
    )


@dataclass(frozen=True)
class BenchmarkEpisode:
    target: Tuple[float, float]
    steps: int
    episode_return: float
    solved: bool
    residual: float


def run_benchmark_episode(config: EnvConfig, gains: GainConstants, target: Sequence[float]) -> BenchmarkEpisode:
    """Roll out the controller from the hanging pose toward `target`."""
    state = ArmState(theta=0.0, phi=0.0, omega_theta=0.0, omega_phi=0.0, target=(float(target[0]), float(target[1])))
    configs = ideal_configurations(state.target, config.center, config.link_length, state.theta)
    chosen = select_target_config(configs)
    residual = configuration_residual(chosen, state.target, config.center, config.link_length)
    total, solved = 0.0, False
    while not state.done:
        state, result = step_state(config, state, policy_action(state, chosen, gains, config.max_torque))
        total += result.reward
        solved = result.reached
    return BenchmarkEpisode(state.target, state.step_index, total, solved, residual)


def rollout(
    config: EnvConfig, gains: GainConstants, targets: Iterable[Sequence[float]]
) -> List[BenchmarkEpisode]:
    return [run_benchmark_episode(config, gains, target) for target in targets]


def coarse_grid(levels: Sequence[float] = GAIN_LEVELS) -> List[Tuple[float, float]]:
    return list(product(levels, levels))


def _score(config: EnvConfig, pair: Tuple[float, float], targets) -> Tuple[float, float]:
    episodes = rollout(config, GainConstants(*pair), targets)
    solve_rate = sum(e.solved for e in episodes) / len(episodes)
    mean_steps = sum(e.steps for e in episodes) / len(episodes)
    log.debug(f"Gains c1={pair[0]:g} c2={pair[1]:g}: solve rate {solve_rate:.3f}, mean steps {mean_steps:.2f}")
    return solve_rate, mean_steps


def _best(scores: dict) -> Tuple[float, float]:
    return max(scores, key=lambda pair: (scores[pair][0], -scores[pair][1]))


def calibrate_gains(
    config: EnvConfig,
    targets: Sequence[Sequence[float]],
    grid: Optional[Sequence[Tuple[float, float]]] = None,
    refine: bool = True,
) -> GainConstants:
    """Grid-search (c1, c2) on a fixed target set.

    Picks the highest solve rate, then the fewest mean steps; optionally re-searches the
    best cell scaled by 1/3, 1 and 3. The winner must solve every target.
    """
    grid = coarse_grid() if grid is None else list(grid)
    if not targets:
        raise CalibrationError("Calibration needs at least one target")
    usable = [pair for pair in grid if pair[0] > 0 and pair[1] > 0]
    for pair in set(grid) - set(usable):
        log.warning(f"Skipping non-positive gains c1={pair[0]:g} c2={pair[1]:g}")
    if not usable:
        raise CalibrationError("The gain grid has no positive (c1, c2) pair")

    scores = {pair: _score(config, pair, targets) for pair in usable}
    best = _best(scores)
    if refine:
        for f1, f2 in product(REFINE_FACTORS, REFINE_FACTORS):
            pair = (best[0] * f1, best[1] * f2)
            if pair not in scores:
                scores[pair] = _score(config, pair, targets)
        best = _best(scores)

    solve_rate, mean_steps = scores[best]
    if solve_rate < 1.0:
        raise CalibrationError(
            f"Best gains c1={best[0]:g} c2={best[1]:g} solve only {solve_rate:.1%} of {len(targets)} episodes; "
            "enlarge the grid"
        )
    log.info(f"Calibrated gains c1={best[0]:g} c2={best[1]:g} (mean steps {mean_steps:.2f})")
    return GainConstants(*best)


def save_gains(path: Union[str, Path], gains: GainConstants, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump({"c1": float(gains.c1), "c2": float(gains.c2), **extra}, f, sort_keys=False)
    return path


def load_gains(path: Union[str, Path]) -> GainConstants:
    path = Path(path)
    if not path.exists():
        raise CalibrationError(f"No gains file at {path}; run `qsac calibrate` first")
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    try:
        return GainConstants(float(data["c1"]), float(data["c2"]))
    except (KeyError, TypeError, ValueError) as e:
        raise CalibrationError(f"Malformed gains file {path}: {e}") from e
