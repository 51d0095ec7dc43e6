import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from topv.search import SQRT2, astar, bounding_box, can_move, distance_field, octile, path_cost


def test_octile():
    assert octile((0, 0), (3, 0)) == 3.0
    assert octile((0, 0), (2, 2)) == pytest.approx(2 * SQRT2)
    assert octile((0, 0), (1, 3)) == pytest.approx(2 + SQRT2)


def test_path_cost():
    assert path_cost([(0, 0)]) == 0.0
    assert path_cost([(0, 0), (0, 1), (1, 2)]) == pytest.approx(1 + SQRT2)


def test_no_corner_cutting():
    traversable = np.array([[True, False], [True, True]])
    assert not can_move(traversable, (0, 0), 1, 1)
    assert can_move(traversable, (0, 0), 1, 0)
    assert not can_move(traversable, (0, 0), -1, 0)
    result = astar(traversable, (0, 0), (1, 1))
    assert result.path == [(0, 0), (1, 0), (1, 1)]
    assert result.cost == 2.0


def test_straight_line():
    traversable = np.ones((5, 5), dtype=bool)
    result = astar(traversable, (2, 0), (2, 4))
    assert result.path == [(2, 0), (2, 1), (2, 2), (2, 3), (2, 4)]
    assert result.cost == 4.0


def test_unreachable_goal_explores_component():
    traversable = np.ones((4, 5), dtype=bool)
    traversable[:, 2] = False
    result = astar(traversable, (0, 0), (0, 4))
    assert result.path is None
    assert math.isinf(result.cost)
    assert set(result.g) == {(r, c) for r in range(4) for c in range(2)}


def test_bounding_box():
    mask = np.zeros((5, 6), dtype=bool)
    assert bounding_box(mask) is None
    mask[1, 2] = mask[3, 4] = True
    assert bounding_box(mask) == (1, 4, 2, 5)


def test_distance_field_units():
    traversable = np.ones((3, 3), dtype=bool)
    field = distance_field(traversable, [(0, 0)], meters_per_cell=0.5)
    assert field[0, 0] == 0.0
    assert field[0, 2] == pytest.approx(1.0)
    assert field[2, 2] == pytest.approx(SQRT2)
    blocked = traversable.copy()
    blocked[1, 1] = False
    field = distance_field(blocked, [(0, 0)])
    assert math.isinf(field[1, 1])
    assert field[2, 2] == pytest.approx(4.0)


def test_distance_field_no_sources():
    traversable = np.ones((3, 3), dtype=bool)
    assert np.isinf(distance_field(traversable, [])).all()
    traversable[0, 0] = False
    assert np.isinf(distance_field(traversable, [(0, 0)])).all()


@settings(deadline=None, max_examples=50)
@given(grid=arrays(dtype=bool, shape=(12, 12)))
def test_astar_matches_dijkstra(grid: np.ndarray):
    traversable = ~grid
    traversable[0, 0] = traversable[11, 11] = True
    field = distance_field(traversable, [(0, 0)])
    result = astar(traversable, (0, 0), (11, 11))
    if np.isinf(field[11, 11]):
        assert result.path is None
        return
    assert result.path is not None
    assert result.path[0] == (0, 0) and result.path[-1] == (11, 11)
    assert result.cost == pytest.approx(field[11, 11])
    for a, b in zip(result.path, result.path[1:]):
        assert can_move(traversable, a, b[0] - a[0], b[1] - a[1])
