import math

import numpy as np
import pytest

from qsac.exceptions import DivergenceError
from qsac.utils import check_finite, describe, moving_average, spawn_generators, to_positive_angle, wrap_angle


@pytest.mark.parametrize(
    ("angle", "expected"),
    ((0.0, 0.0), (math.pi, -math.pi), (-math.pi, -math.pi), (3 * math.pi / 2, -math.pi / 2), (7.0, 7.0 - 2 * math.pi)),
)
def test_wrap_angle(angle, expected):
    assert wrap_angle(angle) == pytest.approx(expected)


def test_to_positive_angle():
    assert to_positive_angle(-math.pi / 2) == pytest.approx(3 * math.pi / 2)
    assert to_positive_angle(0.0) == 0.0
    assert 0.0 <= to_positive_angle(-1e-18) < 2 * math.pi


def test_check_finite():
    check_finite("ok", np.zeros(3), 1.0)
    with pytest.raises(DivergenceError, match="critic loss"):
        check_finite("critic loss", np.zeros(2), np.array([np.inf]))


def test_spawn_generators_are_reproducible():
    first = [rng.random() for rng in spawn_generators(5, 3)]
    second = [rng.random() for rng in spawn_generators(5, 3)]
    assert first == second
    assert len(set(first)) == 3


def test_moving_average():
    assert moving_average([1, 2, 3, 4], 2).tolist() == [1.0, 1.5, 2.5, 3.5]
    assert moving_average([4.0], 20).tolist() == [4.0]
    with pytest.raises(ValueError):
        moving_average([1.0], 0)


def test_describe():
    stats = describe([1.0, 2.0, 3.0, 4.0])
    assert stats["count"] == 4
    assert stats["mean"] == pytest.approx(2.5)
    assert stats["std"] == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
    assert stats["50%"] == pytest.approx(2.5)
    assert describe([7.0])["std"] == 0.0
    with pytest.raises(ValueError):
        describe([])
