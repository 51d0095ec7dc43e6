""" Synthetic indoor scenes, discrete agent kinematics and a ray-cast observation model. """

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from topv.config import WorldConfig

Cell = Tuple[int, int]
Point = Tuple[float, float]

TWO_PI = 2.0 * math.pi


class SceneValidationError(ValueError):
    """ Malformed scene document. path locates the bad field, e.g. objects[2].position. """

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


class Action(Enum):
    MOVE_FORWARD = "move_forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    LOOK_UP = "look_up"
    LOOK_DOWN = "look_down"
    STOP = "stop"


@dataclass(frozen=True)
class Rect:
    x: float
    y: float
    w: float
    h: float

    @property
    def x1(self) -> float:
        return self.x + self.w

    @property
    def y1(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> Point:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x1 and self.y <= py <= self.y1

    def cell_span(self, meters_per_cell: float) -> Tuple[int, int, int, int]:
        """ (row0, row1, col0, col1), half open, of every cell the rectangle overlaps. """
        r0 = int(math.floor(self.y / meters_per_cell + 1e-9))
        r1 = max(r0 + 1, int(math.ceil(self.y1 / meters_per_cell - 1e-9)))
        c0 = int(math.floor(self.x / meters_per_cell + 1e-9))
        c1 = max(c0 + 1, int(math.ceil(self.x1 / meters_per_cell - 1e-9)))
        return r0, r1, c0, c1

    def as_list(self) -> List[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class PlacedObject:
    category: str
    position: Point
    footprint: Rect


@dataclass(frozen=True)
class Room:
    kind: str
    rect: Rect


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0
    tilt: float = 0.0

    @property
    def position(self) -> Point:
        return (self.x, self.y)


@dataclass(frozen=True, eq=False)
class Observation:
    free_cells: np.ndarray
    obstacle_cells: np.ndarray
    visible_objects: Tuple[Tuple[str, Point], ...]
    meters_per_cell: float
    origin: Point = (0.0, 0.0)


@dataclass(frozen=True)
class Scene:
    bounds: Point
    walls: Tuple[Rect, ...]
    objects: Tuple[PlacedObject, ...]
    start: Pose
    targets: Tuple[str, ...] = ()
    rooms: Tuple[Room, ...] = ()
    meters_per_cell: float = 0.05
    blocked: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocked", self._rasterize())

    def _rasterize(self) -> np.ndarray:
        res = self.meters_per_cell
        rows = int(math.ceil(self.bounds[1] / res - 1e-9))
        cols = int(math.ceil(self.bounds[0] / res - 1e-9))
        blocked = np.zeros((rows, cols), dtype=bool)
        for rect in list(self.walls) + [obj.footprint for obj in self.objects]:
            r0, r1, c0, c1 = rect.cell_span(res)
            blocked[max(r0, 0) : max(r1, 0), max(c0, 0) : max(c1, 0)] = True
        blocked.setflags(write=False)
        return blocked

    @property
    def shape(self) -> Tuple[int, int]:
        return self.blocked.shape  # type: ignore

    def world_to_cell(self, x: float, y: float) -> Cell:
        return int(math.floor(y / self.meters_per_cell)), int(math.floor(x / self.meters_per_cell))

    def cell_center(self, row: int, col: int) -> Point:
        return ((col + 0.5) * self.meters_per_cell, (row + 0.5) * self.meters_per_cell)

    def is_navigable(self, x: float, y: float) -> bool:
        if not (0.0 <= x < self.bounds[0] and 0.0 <= y < self.bounds[1]):
            return False
        row, col = self.world_to_cell(x, y)
        rows, cols = self.shape
        return 0 <= row < rows and 0 <= col < cols and not self.blocked[row, col]

    def instances(self, category: str) -> List[PlacedObject]:
        return [obj for obj in self.objects if obj.category == category]


def wrap_angle(angle: float) -> float:
    """ Maps an angle difference into [-pi, pi). """
    return (angle + math.pi) % TWO_PI - math.pi


def normalize_heading(heading: float) -> float:
    heading = heading % TWO_PI
    if heading < 1e-9 or TWO_PI - heading < 1e-9:
        return 0.0
    return heading


def first_blocked(scene: Scene, pose: Pose, distance: float) -> Optional[Cell]:
    """ First blocked cell the segment of the given length along the heading enters, if any. """
    _, hits = cast_rays(
        scene.blocked, pose.x, pose.y, np.array([pose.heading]), distance, scene.meters_per_cell
    )
    if hits[0, 0] < 0:
        return None
    return int(hits[0, 0]), int(hits[0, 1])


def step(scene: Scene, pose: Pose, action: Action, config: WorldConfig = WorldConfig()) -> Pose:
    turn = math.radians(config.turn_degrees)
    if action is Action.MOVE_FORWARD:
        x = pose.x + config.forward_step * math.cos(pose.heading)
        y = pose.y + config.forward_step * math.sin(pose.heading)
        # The whole swept segment must be clear, not just the destination.
        swept = first_blocked(scene, pose, config.forward_step)
        if not scene.is_navigable(x, y) or swept is not None:
            logging.debug(f"Collision moving from {pose.position} to {(x, y)}")
            return pose
        return replace(pose, x=x, y=y)
    elif action is Action.TURN_LEFT:
        return replace(pose, heading=normalize_heading(pose.heading + turn))
    elif action is Action.TURN_RIGHT:
        return replace(pose, heading=normalize_heading(pose.heading - turn))
    elif action is Action.LOOK_UP:
        return replace(pose, tilt=min(pose.tilt + turn, math.pi / 2))
    elif action is Action.LOOK_DOWN:
        return replace(pose, tilt=max(pose.tilt - turn, -math.pi / 2))
    elif action is Action.STOP:
        return pose
    raise ValueError(f"Unknown action {action}")


def cast_rays(
    blocked: np.ndarray,
    x: float,
    y: float,
    angles: np.ndarray,
    max_range: float,
    meters_per_cell: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Grid DDA traversal of every ray at once.

    Args:
        blocked: (rows, cols) raster whose cell (r, c) spans [c, c + 1) x [r, r + 1) cells.
        x, y: ray origin in meters, in the raster's frame.
        angles: ray directions in radians, counterclockwise from +x.
        max_range: rays stop at the first cell entered beyond this many meters.

    Returns:
        visited: (n_rays, n_steps, 2) free cells passed through before any hit, padded with -1.
        hits: (n_rays, 2) the first blocked cell of each ray, or -1 if the ray ran out of range.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    n = angles.shape[0]
    rows, cols = blocked.shape
    sx, sy = x / meters_per_cell, y / meters_per_cell
    dx, dy = np.cos(angles), np.sin(angles)
    max_t = max_range / meters_per_cell

    col = np.full(n, int(math.floor(sx)), dtype=int)
    row = np.full(n, int(math.floor(sy)), dtype=int)
    step_c = np.where(dx > 0, 1, -1)
    step_r = np.where(dy > 0, 1, -1)
    moving_c = np.abs(dx) > 1e-12
    moving_r = np.abs(dy) > 1e-12
    with np.errstate(divide="ignore"):
        delta_c = np.where(moving_c, 1.0 / np.abs(dx), np.inf)
        delta_r = np.where(moving_r, 1.0 / np.abs(dy), np.inf)
    edge_c = np.where(dx > 0, math.floor(sx) + 1 - sx, sx - math.floor(sx))
    edge_r = np.where(dy > 0, math.floor(sy) + 1 - sy, sy - math.floor(sy))
    t_max_c = np.where(moving_c, edge_c * delta_c, np.inf)
    t_max_r = np.where(moving_r, edge_r * delta_r, np.inf)

    n_steps = int(math.ceil(2 * max_t)) + 2
    visited = np.full((n, n_steps, 2), -1, dtype=int)
    hits = np.full((n, 2), -1, dtype=int)
    active = np.ones(n, dtype=bool)
    for k in range(n_steps):
        active &= (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
        if not active.any():
            break
        r = np.clip(row, 0, rows - 1)
        c = np.clip(col, 0, cols - 1)
        hit = active & blocked[r, c]
        hits[hit, 0] = row[hit]
        hits[hit, 1] = col[hit]
        free = active & ~hit
        visited[free, k, 0] = row[free]
        visited[free, k, 1] = col[free]
        active &= ~hit

        go_c = t_max_c <= t_max_r
        active &= np.where(go_c, t_max_c, t_max_r) <= max_t
        advance_c = active & go_c
        advance_r = active & ~go_c
        col = np.where(advance_c, col + step_c, col)
        row = np.where(advance_r, row + step_r, row)
        t_max_c = np.where(advance_c, t_max_c + delta_c, t_max_c)
        t_max_r = np.where(advance_r, t_max_r + delta_r, t_max_r)
    return visited, hits


def ray_angles(pose: Pose, config: WorldConfig) -> np.ndarray:
    """ Evenly spread so neighbouring rays are at most one cell apart at max range. """
    fov = math.radians(config.fov_degrees)
    n_rays = int(math.ceil(fov / (config.meters_per_cell / config.max_depth))) + 1
    return pose.heading - fov / 2 + np.linspace(0.0, fov, n_rays)


def object_visible(
    scene: Scene, pose: Pose, obj: PlacedObject, config: WorldConfig = WorldConfig()
) -> bool:
    """ In range, inside the field of view, and the first thing a ray toward its center hits. """
    ox, oy = obj.position
    dist = math.hypot(ox - pose.x, oy - pose.y)
    if dist > config.max_depth:
        return False
    bearing = math.atan2(oy - pose.y, ox - pose.x)
    if abs(wrap_angle(bearing - pose.heading)) > math.radians(config.fov_degrees) / 2 + 1e-9:
        return False
    _, hits = cast_rays(
        scene.blocked, pose.x, pose.y, np.array([bearing]), dist, scene.meters_per_cell
    )
    hit_row, hit_col = hits[0]
    if hit_row < 0:
        return True
    r0, r1, c0, c1 = obj.footprint.cell_span(scene.meters_per_cell)
    return r0 <= hit_row < r1 and c0 <= hit_col < c1


def observe(scene: Scene, pose: Pose, config: WorldConfig = WorldConfig()) -> Observation:
    visited, hits = cast_rays(
        scene.blocked,
        pose.x,
        pose.y,
        ray_angles(pose, config),
        config.max_depth,
        scene.meters_per_cell,
    )
    free = visited[visited[..., 0] >= 0]
    free_cells = np.unique(free.reshape(-1, 2), axis=0)
    obstacle_cells = np.unique(hits[hits[:, 0] >= 0].reshape(-1, 2), axis=0)
    visible = tuple(
        (obj.category, obj.position)
        for obj in scene.objects
        if object_visible(scene, pose, obj, config)
    )
    return Observation(
        free_cells=free_cells,
        obstacle_cells=obstacle_cells,
        visible_objects=visible,
        meters_per_cell=scene.meters_per_cell,
    )


def is_success(
    scene: Scene, pose: Pose, target: str, config: WorldConfig = WorldConfig()
) -> bool:
    for obj in scene.instances(target):
        close = math.hypot(obj.position[0] - pose.x, obj.position[1] - pose.y)
        if close <= config.success_distance and object_visible(scene, pose, obj, config):
            return True
    return False


# Scene documents


def _numbers(value: Any, n: int, path: str) -> List[float]:
    if (
        not isinstance(value, list)
        or len(value) != n
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise SceneValidationError(path, f"expected a list of {n} numbers, got {value!r}")
    if not all(math.isfinite(v) for v in value):
        raise SceneValidationError(path, f"non-finite value in {value!r}")
    return [float(v) for v in value]


def _rect(value: Any, path: str) -> Rect:
    x, y, w, h = _numbers(value, 4, path)
    if w <= 0 or h <= 0:
        raise SceneValidationError(path, f"rectangle must have positive extent, got {value!r}")
    return Rect(x, y, w, h)


def _field(doc: Dict[str, Any], key: str, path: str) -> Any:
    if not isinstance(doc, dict):
        raise SceneValidationError(path, f"expected an object, got {doc!r}")
    if key not in doc:
        raise SceneValidationError(f"{path}.{key}" if path else key, "missing")
    return doc[key]


def _default_start(scene: Scene) -> Pose:
    cx, cy = scene.bounds[0] / 2, scene.bounds[1] / 2
    if scene.is_navigable(cx, cy):
        return Pose(cx, cy, 0.0)
    rows, cols = np.nonzero(~scene.blocked)
    x, y = scene.cell_center(int(rows[0]), int(cols[0]))
    return Pose(x, y, 0.0)


def scene_from_dict(doc: Dict[str, Any], meters_per_cell: float = 0.05) -> Scene:
    width, height = _numbers(_field(doc, "bounds", ""), 2, "bounds")
    if width <= 0 or height <= 0:
        raise SceneValidationError("bounds", f"must be positive, got {[width, height]}")

    walls = []
    for i, wall in enumerate(doc.get("walls", [])):
        walls.append(_rect(_field(wall, "rect", f"walls[{i}]"), f"walls[{i}].rect"))

    objects = []
    for i, obj in enumerate(doc.get("objects", [])):
        path = f"objects[{i}]"
        category = _field(obj, "category", path)
        if not isinstance(category, str) or not category:
            raise SceneValidationError(f"{path}.category", "must be a non-empty string")
        x, y = _numbers(_field(obj, "position", path), 2, f"{path}.position")
        if not (0 <= x < width and 0 <= y < height):
            raise SceneValidationError(f"{path}.position", f"({x}, {y}) is outside bounds")
        if "footprint" in obj:
            footprint = _rect(obj["footprint"], f"{path}.footprint")
        else:
            footprint = Rect(x - 0.25, y - 0.25, 0.5, 0.5)
        if not footprint.contains(x, y):
            raise SceneValidationError(f"{path}.footprint", "does not contain the position")
        if footprint.x < 0 or footprint.y < 0 or footprint.x1 > width or footprint.y1 > height:
            raise SceneValidationError(f"{path}.footprint", "extends past the bounds")
        objects.append(PlacedObject(category, (x, y), footprint))

    rooms = []
    for i, room in enumerate(doc.get("rooms", [])):
        kind = _field(room, "type", f"rooms[{i}]")
        rect = _rect(_field(room, "rect", f"rooms[{i}]"), f"rooms[{i}].rect")
        rooms.append(Room(str(kind), rect))

    targets = doc.get("targets", [])
    if not isinstance(targets, list) or not all(isinstance(t, str) and t for t in targets):
        raise SceneValidationError("targets", f"expected a list of category names, got {targets!r}")

    placeholder = Pose(0.0, 0.0)
    scene = Scene(
        bounds=(width, height),
        walls=tuple(walls),
        objects=tuple(objects),
        start=placeholder,
        targets=tuple(targets),
        rooms=tuple(rooms),
        meters_per_cell=meters_per_cell,
    )
    if not np.any(~scene.blocked):
        raise SceneValidationError("walls", "scene has no navigable cell")

    if "start" in doc:
        x, y, heading = _numbers(_field(doc["start"], "pose", "start"), 3, "start.pose")
        start = Pose(x, y, normalize_heading(math.radians(heading)))
        if not scene.is_navigable(x, y):
            raise SceneValidationError("start.pose", f"({x}, {y}) is not on a navigable cell")
    else:
        start = _default_start(scene)
    return replace(scene, start=start)


def load_scene(document: str, meters_per_cell: float = 0.05) -> Scene:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise SceneValidationError("document", f"not valid json: {e}") from e
    return scene_from_dict(doc, meters_per_cell)


def scene_to_dict(scene: Scene) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "bounds": list(scene.bounds),
        "walls": [{"rect": wall.as_list()} for wall in scene.walls],
        "objects": [
            {
                "category": obj.category,
                "position": list(obj.position),
                "footprint": obj.footprint.as_list(),
            }
            for obj in scene.objects
        ],
        "start": {"pose": [scene.start.x, scene.start.y, math.degrees(scene.start.heading)]},
        "targets": list(scene.targets),
    }
    if scene.rooms:
        doc["rooms"] = [{"type": room.kind, "rect": room.rect.as_list()} for room in scene.rooms]
    return doc


def dump_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2)


def render_scene(scene: Scene, poses: Sequence[Pose] = ()) -> np.ndarray:
    """ Ground-truth RGB raster, row 0 at the bottom, with an optional trajectory. """
    image = np.where(scene.blocked[..., None], 40, 235).astype(np.uint8).repeat(3, axis=2)
    for obj in scene.objects:
        r0, r1, c0, c1 = obj.footprint.cell_span(scene.meters_per_cell)
        image[r0:r1, c0:c1] = (70, 130, 70)
    for pose in poses:
        row, col = scene.world_to_cell(pose.x, pose.y)
        image[row, col] = (230, 120, 20)
    return image
