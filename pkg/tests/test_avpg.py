import json
from itertools import combinations
from typing import List

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis.extra.numpy import arrays
from hypothesis.strategies import floats, integers

from tests.helpers import open_grid, prompt_map_of
from topv.avpg import (
    GLYPH_HEIGHT,
    PALETTE,
    KeyAreaMarker,
    MapFrame,
    cluster_key_areas,
    iou,
    key_area_points,
    layout_text_boxes,
    merge_areas,
    render_prompt_map,
)
from topv.config import ClusterConfig, RenderConfig
from topv.topmap import CellState, DetectedObject, OccupancyGrid
from topv.worldsim import Pose


def reference_dbscan(points: np.ndarray, epsilon: float, min_pts: int) -> List[np.ndarray]:
    """Textbook DBSCAN over the points in (x, then y) order.

    Areas are numbered by their first core point; a border point within reach of several areas
    joins the lowest numbered one.
    """
    pts = points[np.lexsort((points[:, 1], points[:, 0]))]
    near = np.linalg.norm(pts[:, None] - pts[None, :], axis=2) <= epsilon
    core = near.sum(axis=1) >= min_pts
    labels = np.full(len(pts), -1)
    n_areas = 0
    for seed in range(len(pts)):
        if not core[seed] or labels[seed] >= 0:
            continue
        labels[seed] = n_areas
        stack = [seed]
        while stack:
            p = stack.pop()
            for q in np.flatnonzero(near[p] & core):
                if labels[q] < 0:
                    labels[q] = n_areas
                    stack.append(q)
        n_areas += 1
    for p in np.flatnonzero(~core):
        reached = labels[np.flatnonzero(near[p] & core)]
        if reached.size > 0:
            labels[p] = reached.min()
    return [pts[labels == k] for k in range(n_areas)]


def reference_merge(areas: List[np.ndarray], epsilon: float) -> List[np.ndarray]:
    areas = list(areas)
    while True:
        close = [
            (i, j)
            for i, j in combinations(range(len(areas)), 2)
            if np.linalg.norm(areas[i].mean(axis=0) - areas[j].mean(axis=0)) <= epsilon
        ]
        if not close:
            return areas
        i, j = close[0]
        areas[i] = np.concatenate((areas[i], areas[j]))
        del areas[j]


def clear_of_epsilon(points: np.ndarray, epsilon: float) -> bool:
    dist = np.linalg.norm(points[:, None] - points[None, :], axis=2)
    return not np.any(np.abs(dist - epsilon) < 1e-9)


def test_iou():
    assert iou((0, 0, 2, 1), (0, 0, 2, 1)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0
    assert iou((0, 0, 2, 1), (1, 0, 3, 1)) == pytest.approx(1 / 3)


@pytest.mark.parametrize("min_pts", [1, 2, 3, 4])
@settings(deadline=None, max_examples=250)
@given(points=arrays(dtype=np.float64, shape=(50, 2), elements=floats(0.0, 10.0)))
def test_clusters_match_reference_dbscan(min_pts: int, points: np.ndarray):
    assume(clear_of_epsilon(points, 1.3))
    markers = cluster_key_areas([tuple(p) for p in points], ClusterConfig(1.3, min_pts))
    expected = reference_dbscan(points, 1.3, min_pts)
    assert [m.members.tolist() for m in markers] == [area.tolist() for area in expected]
    assert [m.id for m in markers] == list(range(1, len(markers) + 1))
    for m in markers:
        assert m.centroid == pytest.approx(tuple(m.members.mean(axis=0)))


@pytest.mark.parametrize("min_pts", [1, 2, 3])
@settings(deadline=None, max_examples=250)
@given(points=arrays(dtype=np.float64, shape=(50, 2), elements=floats(0.0, 10.0)))
def test_merged_areas_match_reference(min_pts: int, points: np.ndarray):
    assume(clear_of_epsilon(points, 1.3))
    config = ClusterConfig(1.3, min_pts)
    merged = merge_areas(cluster_key_areas([tuple(p) for p in points], config), config)
    expected = reference_merge(reference_dbscan(points, 1.3, min_pts), 1.3)
    assert [m.members.tolist() for m in merged] == [area.tolist() for area in expected]
    assert [m.id for m in merged] == list(range(1, len(merged) + 1))
    for a, b in combinations(merged, 2):
        assert np.linalg.norm(np.subtract(a.centroid, b.centroid)) > config.epsilon


@settings(deadline=None)
@given(lattice=arrays(dtype=np.int64, shape=(10, 2), elements=integers(0, 10)))
def test_clusters_ignore_input_order(lattice: np.ndarray):
    points = [tuple(p) for p in lattice * 0.5]
    forward = cluster_key_areas(points)
    backward = cluster_key_areas(points[::-1])
    assert [m.members.tolist() for m in forward] == [m.members.tolist() for m in backward]


def test_cluster_edge_cases():
    assert cluster_key_areas([]) == []
    assert cluster_key_areas([(0.0, 0.0)]) == []
    assert cluster_key_areas([(0.0, 0.0), (5.0, 5.0)]) == []
    (single,) = cluster_key_areas([(0.0, 0.0), (1.0, 0.0)])
    assert single.label == "m1"
    assert single.centroid == pytest.approx((0.5, 0.0))
    everything = cluster_key_areas([(0.0, 0.0), (5.0, 5.0)], ClusterConfig(min_pts=1))
    assert len(everything) == 2


def marker(id: int, x: float) -> KeyAreaMarker:
    return KeyAreaMarker(id, (x, 0.0), np.array([[x, 0.0]]))


def test_merge_chain():
    (merged,) = merge_areas([marker(1, 0.0), marker(2, 0.8), marker(3, 1.6)])
    assert merged.id == 1
    assert merged.members.shape == (3, 2)
    assert merged.centroid == pytest.approx((0.8, 0.0))


def test_merge_stops_when_centroid_moves_away():
    merged = merge_areas([marker(1, 0.0), marker(2, 1.0), marker(3, 2.0)])
    assert [m.id for m in merged] == [1, 2]
    assert merged[0].centroid == pytest.approx((0.5, 0.0))
    assert merged[1].centroid == pytest.approx((2.0, 0.0))


def test_merge_leaves_separated_areas():
    merged = merge_areas([marker(4, 0.0), marker(7, 3.0)])
    assert [m.id for m in merged] == [1, 2]
    assert [m.centroid for m in merged] == [(0.0, 0.0), (3.0, 0.0)]
    for a, b in combinations(merged, 2):
        assert np.linalg.norm(np.subtract(a.centroid, b.centroid)) > ClusterConfig().epsilon


def test_text_boxes_anchor_on_objects():
    frame = MapFrame(0.0, 0.0, 10.0, 10.0, 20.0)
    objects = [DetectedObject("chair", (5.0, 5.0), 0), DetectedObject("tv", (12.0, 5.0), 0)]
    (box,) = layout_text_boxes(objects, frame)
    assert box.label == "chair"
    assert box.anchor == (100.0, 100.0)
    assert box.rect == (100.0, 100.0 - GLYPH_HEIGHT, 100.0 + 7 * 5 + 4, 100.0)
    assert box.position == (5.0, 5.0)


def test_frame_pixel_round_trip():
    frame = MapFrame(-2.0, 1.0, 8.0, 6.0, 20.0)
    assert frame.size == (200, 100)
    assert frame.world_to_pixel(-2.0, 6.0) == (0.0, 0.0)
    assert frame.pixel_to_world(*frame.world_to_pixel(3.5, 2.25)) == pytest.approx((3.5, 2.25))


def test_build_prompt_map():
    grid = open_grid([("chair", (5.0, 5.0)), ("table", (5.3, 5.0))])
    pm = prompt_map_of(grid)
    assert pm.image.size == (200, 200)
    assert pm.crop_window == pytest.approx((0.0, 0.0, 10.0, 10.0))
    assert len(pm.frontiers) == 1
    # Two objects and the frontier midpoint, which is far away.
    assert [m.label for m in pm.markers] == ["m1"]
    assert pm.markers[0].centroid == pytest.approx((5.15, 5.0))
    assert [box.label for box in pm.textboxes] == ["chair", "table"]

    meta = pm.metadata()
    assert set(meta) >= {"crop_window", "pixels_per_meter", "markers", "frontiers", "agent"}
    assert meta["markers"] == {"m1": [5.15, 5.0]}
    assert meta["agent"]["position"] == [2.0, 2.0]
    assert len(meta["textboxes"]) == 2
    json.dumps(meta)


def test_render_is_pure():
    grid = open_grid([("chair", (5.0, 5.0))])
    assert prompt_map_of(grid).png_bytes() == prompt_map_of(grid).png_bytes()


def test_textbox_ablation_withholds_labels():
    grid = open_grid([("chair", (5.0, 5.0)), ("table", (5.3, 5.0))])
    pm = prompt_map_of(grid, RenderConfig().without("textboxes"))
    assert pm.textboxes == ()
    assert pm.objects == ()
    assert "textboxes" not in pm.metadata()
    assert len(pm.markers) == 1


def test_obstacle_ablation_paints_unknown():
    grid = OccupancyGrid(200, 200, 0.05, (0.0, 0.0))
    grid.cells[20:30, 150:160] = CellState.OBSTACLE
    frame = MapFrame.of_grid(grid, 20.0)
    pose = Pose(2.0, 8.0)
    shown = render_prompt_map(grid, [], [], pose, frame, RenderConfig())
    hidden = render_prompt_map(grid, [], [], pose, frame, RenderConfig().without("obstacle"))
    assert shown.image.getpixel((155, 175)) == PALETTE["obstacle"]
    assert hidden.image.getpixel((155, 175)) == PALETTE["unknown"]


def test_save_writes_image_and_sidecar(tmp_path):
    pm = prompt_map_of(open_grid([("chair", (5.0, 5.0))]))
    pm.save(tmp_path / "map")
    assert (tmp_path / "map.png").read_bytes() == pm.png_bytes()
    assert json.loads((tmp_path / "map.json").read_text())["pixels_per_meter"] == 20.0


def test_key_area_points_order():
    grid = open_grid([("chair", (5.0, 5.0))])
    pm = prompt_map_of(grid)
    points = key_area_points(grid.object_log, pm.frontiers)
    assert points[0] == (5.0, 5.0)
    assert points[1] == pm.frontiers[0].midpoint
