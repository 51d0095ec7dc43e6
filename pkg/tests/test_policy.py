import math

import numpy as np
import pytest
from scipy import ndimage  # type: ignore

from check_episode_output import check_dump
from tests.helpers import FixedReasoner, open_grid
from topv.config import MapConfig, NavConfig, PolicyConfig, override
from topv.policy import (
    Episode,
    EpisodeResult,
    Mode,
    Plan,
    choose_moving_location,
    face,
    next_action,
    plan_path,
    run_episode,
)
from topv.reasoner import HEURISTIC, Role, ScriptedReasoner
from topv.topmap import CellState, OccupancyGrid
from topv.worldsim import Action, Pose

SMALL = override(NavConfig(), grid=MapConfig(width=400, height=400))


def corridor() -> OccupancyGrid:
    """ 20 x 20 cells of one meter, a single free row 5 and a wall below it. """
    grid = OccupancyGrid(20, 20, 1.0, (0.0, 0.0))
    grid.cells[5, :] = CellState.FREE
    grid.cells[4, :] = CellState.OBSTACLE
    return grid


def test_plan_along_corridor():
    plan = plan_path(corridor(), (0.5, 5.5), (19.5, 5.5))
    assert plan.waypoints == [(5, c) for c in range(20)]
    assert plan.mode is Mode.EXPLORE
    assert plan.position(-1) == (19.5, 5.5)


def test_unknown_goal_snaps_to_nearest_reachable():
    plan = plan_path(corridor(), (0.5, 5.5), (19.5, 15.5))
    assert plan.waypoints[-1] == (5, 19)
    assert plan.goal == (19.5, 15.5)
    blocked = plan_path(corridor(), (0.5, 5.5), (10.5, 4.5), mode=Mode.APPROACH)
    assert blocked.waypoints[-1] == (5, 10)
    assert blocked.mode is Mode.APPROACH


def test_nothing_reachable_gives_empty_plan():
    grid = OccupancyGrid(20, 20, 1.0, (0.0, 0.0))
    grid.cells[0, 0] = CellState.OBSTACLE
    plan = plan_path(grid, (10.5, 10.5), (2.5, 2.5))
    assert len(plan) == 0
    assert plan.finished(Pose(10.5, 10.5), 0.2)


def test_plan_avoids_corner_cutting():
    grid = OccupancyGrid(5, 5, 1.0, (0.0, 0.0))
    grid.cells[:, :] = CellState.FREE
    grid.cells[1, 1] = CellState.OBSTACLE
    plan = plan_path(grid, (0.5, 0.5), (2.5, 2.5))
    for a, b in zip(plan.waypoints, plan.waypoints[1:]):
        assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
        if a[0] != b[0] and a[1] != b[1]:
            assert grid.cells[a[0], b[1]] == CellState.FREE
            assert grid.cells[b[0], a[1]] == CellState.FREE
    assert plan.waypoints[-1] == (2, 2)


def test_clearance_is_ignored_in_narrow_corridor():
    grid = OccupancyGrid(30, 30, 0.05, (0.0, 0.0))
    grid.cells[10:13, :] = CellState.FREE
    grid.cells[9, :] = grid.cells[13, :] = CellState.OBSTACLE
    plan = plan_path(grid, (0.025, 0.575), (1.475, 0.575), clearance=0.15)
    assert plan.waypoints[-1] == (11, 29)


def test_face():
    pose = Pose(0.0, 0.0, 0.0)
    assert face(pose, (1.0, 0.1)) is None
    assert face(pose, (0.0, 1.0)) is Action.TURN_LEFT
    assert face(pose, (0.0, -1.0)) is Action.TURN_RIGHT
    assert face(pose, (-1.0, 0.0)) is Action.TURN_LEFT


def test_next_action_pops_reached_waypoints():
    plan = Plan([(0, 0), (0, 1), (0, 2)], (2.5, 0.5), origin=(0.0, 0.0), meters_per_cell=1.0)
    assert next_action(plan, Pose(0.5, 0.5, 0.0)) is Action.MOVE_FORWARD
    assert plan.waypoints == [(0, 1), (0, 2)]
    assert next_action(plan, Pose(0.5, 0.5, math.pi)) is Action.TURN_LEFT
    assert next_action(plan, Pose(0.5, 0.5, math.pi / 2)) is Action.TURN_RIGHT


def test_next_action_at_final_waypoint():
    plan = Plan([(0, 2)], (2.5, 0.5), origin=(0.0, 0.0), meters_per_cell=1.0)
    assert plan.finished(Pose(2.5, 0.5), PolicyConfig().waypoint_radius)
    assert next_action(plan, Pose(2.5, 0.5, 0.0)) is Action.TURN_LEFT
    assert len(plan) == 1


def test_episode_dicts():
    episode = Episode(3, "scene_001", "bed", 7, Pose(1.0, 2.0, 0.5))
    assert Episode.from_dict(episode.to_dict()) == episode
    assert Episode.from_dict(Episode(0, "s", "tv", 0).to_dict()).start is None

    result = EpisodeResult(True, 12, 2.0000001234, 1.5, "bed", 7, index=3)
    row = result.to_dict()
    assert row["path_length"] == 2.0
    assert row["success"] is True and row["stop_reason"] == "limit"
    assert EpisodeResult(**row).shortest_length == 1.5
    with pytest.raises(AssertionError):
        EpisodeResult(False, 1, -1.0, None, "bed", 0)


def crowded_grid() -> OccupancyGrid:
    return open_grid([("chair", (5.0, 5.0)), ("table", (5.3, 5.0))])


def test_choose_moving_location_full():
    grid = crowded_grid()
    reasoner = FixedReasoner(region=None, target=(3.0, 8.0), scores=[0.9])
    decision = choose_moving_location(grid, Pose(2.0, 2.0), "bed", reasoner)
    assert [q.role for q in reasoner.queries] == [
        Role.SELECT_REGION,
        Role.PREDICT_TARGET,
        Role.SCORE_MARKERS,
    ]
    assert decision.target.position == (3.0, 8.0)
    assert decision.scores == (0.9,)
    assert decision.value_map is not None
    assert grid.is_free(*decision.moving_location)


def test_choose_moving_location_without_dms_and_ptd():
    grid = crowded_grid()
    reasoner = FixedReasoner(scores=[0.9])
    config = override(NavConfig(), use_dms=False, use_ptd=False)
    decision = choose_moving_location(grid, Pose(2.0, 2.0), "bed", reasoner, config)
    assert [q.role for q in reasoner.queries] == [Role.SCORE_MARKERS]
    assert decision.target is None
    assert decision.moving_location == pytest.approx((5.15, 5.0), abs=0.05)


def test_choose_moving_location_falls_back_to_frontier():
    grid = open_grid()
    reasoner = FixedReasoner()
    config = override(NavConfig(), use_ptd=False)
    decision = choose_moving_location(grid, Pose(2.0, 2.0), "bed", reasoner, config)
    assert [q.role for q in reasoner.queries] == [Role.SELECT_REGION]
    assert decision.moving_location == decision.prompt_map.frontiers[0].midpoint


def test_choose_moving_location_skips_visited():
    grid = crowded_grid()
    config = override(NavConfig(), use_dms=False, use_ptd=False)
    first = choose_moving_location(grid, Pose(2.0, 2.0), "bed", HEURISTIC, config)
    again = choose_moving_location(
        grid, Pose(2.0, 2.0), "bed", HEURISTIC, config, (first.moving_location,)
    )
    gap = np.hypot(*np.subtract(first.moving_location, again.moving_location))
    assert gap > config.policy.revisit_radius


def test_choose_moving_location_max_mode():
    grid = crowded_grid()
    config = override(NavConfig(), use_dms=False, fusion_mode="max")
    reasoner = FixedReasoner(target=(3.0, 8.0), scores=[0.9])
    decision = choose_moving_location(grid, Pose(2.0, 2.0), "bed", reasoner, config)
    assert decision.value_map is None
    assert decision.moving_location == pytest.approx((5.15, 5.0), abs=0.05)


@pytest.mark.slow
def test_scripted_episode_finds_visible_target(room):
    episode = Episode(0, "room", "chair", 0)
    result = run_episode(room, episode, ScriptedReasoner(room), SMALL)
    assert result.success
    assert result.stop_reason == "stop"
    assert result.shortest_length == pytest.approx(2.5, abs=0.06)
    assert result.path_length <= 0.25 * result.steps + 1e-9
    assert result.path_length >= result.shortest_length - 0.25


@pytest.mark.slow
def test_episode_is_deterministic(two_rooms):
    config = override(SMALL, "policy", step_limit=120)
    episode = Episode(1, "two_rooms", "bed", 5)
    first = run_episode(two_rooms, episode, HEURISTIC, config)
    again = run_episode(two_rooms, episode, HEURISTIC, config)
    assert first.to_dict() == again.to_dict()
    assert first.steps <= 120
    assert first.stop_reason in ("stop", "limit")
    assert first.decisions >= 1


@pytest.mark.slow
def test_episode_dump(two_rooms, tmp_path):
    config = override(SMALL, "policy", step_limit=60)
    result = run_episode(two_rooms, Episode(0, "two_rooms", "bed", 0), HEURISTIC, config, tmp_path)
    for name in ("scene.json", "grid.pgm", "grid.json", "trajectory.png", "result.json"):
        assert (tmp_path / name).exists(), name
    assert (tmp_path / "step_0012_prompt.png").exists()
    assert (tmp_path / "step_0012_decision.json").exists()
    assert result.decisions >= 1
    check_dump(tmp_path, step_limit=60)


def test_clearance_keeps_away_from_walls():
    grid = OccupancyGrid(40, 40, 0.05, (0.0, 0.0))
    grid.cells[:, :] = CellState.FREE
    grid.cells[0, :] = grid.cells[-1, :] = CellState.OBSTACLE
    grid.cells[:, 0] = grid.cells[:, -1] = CellState.OBSTACLE
    grid.cells[20, 12:28] = CellState.OBSTACLE
    plan = plan_path(grid, (1.0, 0.3), (1.0, 1.7), clearance=0.15)
    room = ndimage.distance_transform_edt(grid.cells != CellState.OBSTACLE) * 0.05
    assert plan.waypoints[-1] == grid.world_to_cell(1.0, 1.7)
    assert all(room[cell] > 0.15 for cell in plan.waypoints)
