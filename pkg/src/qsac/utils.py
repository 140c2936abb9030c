import logging
import math
from typing import Dict, List, Sequence

import numpy as np

from qsac.exceptions import DivergenceError

# Grab a logger
log = logging.getLogger("qsac")

TWO_PI = 2.0 * math.pi

# Row labels of the benchmark summary, in print order
DESCRIBE_ROWS = ("count", "mean", "std", "min", "25%", "50%", "75%", "max")


def wrap_angle(angle: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    wrapped = (angle + math.pi) % TWO_PI - math.pi
    # float modulo can land exactly on +pi
    return -math.pi if wrapped >= math.pi else wrapped


def to_positive_angle(angle: float) -> float:
    """Map an environment angle in [-pi, pi) to the solver's [0, 2pi) convention."""
    positive = angle % TWO_PI
    return 0.0 if positive >= TWO_PI else positive


def check_finite(name: str, *arrays) -> None:
    """Raise DivergenceError if any value is NaN or infinite."""
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise DivergenceError(f"Non-finite values in {name}")


def spawn_generators(seed: int, count: int) -> List[np.random.Generator]:
    """Independent, reproducible random streams derived from one seed."""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first window-1 entries average what is available."""
    values = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    cumulative = np.concatenate(([0.0], np.cumsum(values)))
    ends = np.arange(1, len(values) + 1)
    starts = np.maximum(ends - window, 0)
    return (cumulative[ends] - cumulative[starts]) / (ends - starts)


def describe(values: Sequence[float]) -> Dict[str, float]:
    """count/mean/std/min/quartiles/max of a sample (sample standard deviation)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("Cannot describe an empty sample")
    q25, q50, q75 = np.percentile(values, [25, 50, 75])
    return {
        "count": float(values.size),
        "mean": float(values.mean()),
        "std": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        "min": float(values.min()),
        "25%": float(q25),
        "50%": float(q50),
        "75%": float(q75),
        "max": float(values.max()),
    }
