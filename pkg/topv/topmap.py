""" Incremental top-view occupancy map and frontier extraction. """

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from enum import IntEnum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from PIL import Image  # type: ignore
from scipy import ndimage  # type: ignore

from topv.config import MapConfig
from topv.io_utils import write_json
from topv.search import distance_field
from topv.worldsim import Cell, Observation, Point, Pose, Scene


class CellState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OBSTACLE = 2


SNAPSHOT_GRAY = {CellState.OBSTACLE: 0, CellState.UNKNOWN: 128, CellState.FREE: 255}


@dataclass(frozen=True)
class DetectedObject:
    category: str
    position: Point
    first_seen: int


@dataclass(frozen=True, eq=False)
class Frontier:
    cells: np.ndarray
    midpoint: Point

    @property
    def size(self) -> int:
        return int(self.cells.shape[0])


class OccupancyGrid:
    def __init__(
        self,
        width: int = 1000,
        height: int = 1000,
        meters_per_cell: float = 0.05,
        origin: Point = (0.0, 0.0),
    ) -> None:
        self.width = width
        self.height = height
        self.meters_per_cell = meters_per_cell
        self.origin = origin
        self.cells = np.full((height, width), CellState.UNKNOWN, dtype=np.uint8)
        self.object_log: List[DetectedObject] = []
        self.trajectory: List[Cell] = []
        self.step = 0

    @classmethod
    def centered_on(
        cls, pose: Pose, config: MapConfig = MapConfig(), meters_per_cell: float = 0.05
    ) -> "OccupancyGrid":
        """ The start cell sits in the middle; the origin lands on a whole world cell. """
        col = int(math.floor(pose.x / meters_per_cell)) - config.width // 2
        row = int(math.floor(pose.y / meters_per_cell)) - config.height // 2
        return cls(
            config.width,
            config.height,
            meters_per_cell,
            (col * meters_per_cell, row * meters_per_cell),
        )

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        """ (xmin, ymin, xmax, ymax) in world meters. """
        ox, oy = self.origin
        return (
            ox,
            oy,
            ox + self.width * self.meters_per_cell,
            oy + self.height * self.meters_per_cell,
        )

    def world_to_cell(self, x: float, y: float) -> Cell:
        return (
            int(math.floor((y - self.origin[1]) / self.meters_per_cell)),
            int(math.floor((x - self.origin[0]) / self.meters_per_cell)),
        )

    def cell_to_world(self, row: int, col: int) -> Point:
        return (
            self.origin[0] + (col + 0.5) * self.meters_per_cell,
            self.origin[1] + (row + 0.5) * self.meters_per_cell,
        )

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """ World x of every column and world y of every row. """
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.meters_per_cell
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.meters_per_cell
        return xs, ys

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def clamp_point(self, x: float, y: float) -> Point:
        xmin, ymin, xmax, ymax = self.bounds
        eps = self.meters_per_cell / 2
        return (min(max(x, xmin + eps), xmax - eps), min(max(y, ymin + eps), ymax - eps))

    def state_at(self, x: float, y: float) -> CellState:
        row, col = self.world_to_cell(x, y)
        if not self.in_bounds(row, col):
            return CellState.UNKNOWN
        return CellState(int(self.cells[row, col]))

    def is_free(self, x: float, y: float) -> bool:
        return self.state_at(x, y) == CellState.FREE

    def offset_of(self, origin: Point, meters_per_cell: float) -> Cell:
        """ Integer (row, col) shift from a raster with the given origin into this grid. """
        assert math.isclose(meters_per_cell, self.meters_per_cell), (
            f"Observation resolution {meters_per_cell} does not match grid resolution "
            f"{self.meters_per_cell}"
        )
        return (
            int(round((origin[1] - self.origin[1]) / self.meters_per_cell)),
            int(round((origin[0] - self.origin[0]) / self.meters_per_cell)),
        )

    def known_count(self) -> int:
        return int(np.count_nonzero(self.cells != CellState.UNKNOWN))

    def copy(self) -> "OccupancyGrid":
        grid = OccupancyGrid(self.width, self.height, self.meters_per_cell, self.origin)
        grid.cells = self.cells.copy()
        grid.object_log = list(self.object_log)
        grid.trajectory = list(self.trajectory)
        grid.step = self.step
        return grid

    def objects_of(self, category: str) -> List[DetectedObject]:
        return [obj for obj in self.object_log if obj.category == category]

    def save_snapshot(self, path: Union[str, Path]) -> None:
        """ Writes <path>.pgm (one byte per cell, row 0 at the bottom) and <path>.json. """
        path = Path(path)
        gray = np.zeros_like(self.cells)
        for state, value in SNAPSHOT_GRAY.items():
            gray[self.cells == state] = value
        Image.fromarray(np.flipud(gray)).save(path.with_suffix(".pgm"))
        meta = {
            "origin": list(self.origin),
            "meters_per_cell": self.meters_per_cell,
            "step": self.step,
            "object_log": [asdict(obj) for obj in self.object_log],
            "trajectory": [list(cell) for cell in self.trajectory],
        }
        write_json(path.with_suffix(".json"), meta)

    @classmethod
    def load_snapshot(cls, path: Union[str, Path]) -> "OccupancyGrid":
        path = Path(path)
        gray = np.flipud(np.array(Image.open(path.with_suffix(".pgm"))))
        meta = json.loads(path.with_suffix(".json").read_text())
        grid = cls(gray.shape[1], gray.shape[0], meta["meters_per_cell"], tuple(meta["origin"]))
        for state, value in SNAPSHOT_GRAY.items():
            grid.cells[gray == value] = state
        grid.object_log = [
            DetectedObject(obj["category"], tuple(obj["position"]), obj["first_seen"])  # type: ignore
            for obj in meta["object_log"]
        ]
        grid.trajectory = [(int(r), int(c)) for r, c in meta["trajectory"]]
        grid.step = meta["step"]
        return grid


def _shift_cells(grid: OccupancyGrid, cells: np.ndarray, offset: Cell) -> np.ndarray:
    shifted = cells.reshape(-1, 2) + np.array(offset)
    inside = (
        (shifted[:, 0] >= 0)
        & (shifted[:, 0] < grid.height)
        & (shifted[:, 1] >= 0)
        & (shifted[:, 1] < grid.width)
    )
    if not np.all(inside):
        logging.warning(f"Dropping {np.count_nonzero(~inside)} observed cells outside the map")
    return shifted[inside]


def integrate(
    grid: OccupancyGrid, obs: Observation, pose: Pose, dedup_radius: float = 0.25
) -> OccupancyGrid:
    """Writes an observation into the grid in place and returns it.

    Obstacle wins against Free, both within one observation and across time.
    """
    offset = grid.offset_of(obs.origin, obs.meters_per_cell)
    free = _shift_cells(grid, obs.free_cells, offset)
    obstacles = _shift_cells(grid, obs.obstacle_cells, offset)

    current = grid.cells[free[:, 0], free[:, 1]]
    keep = current != CellState.OBSTACLE
    grid.cells[free[keep, 0], free[keep, 1]] = CellState.FREE
    grid.cells[obstacles[:, 0], obstacles[:, 1]] = CellState.OBSTACLE

    for category, position in obs.visible_objects:
        seen = any(
            obj.category == category
            and math.hypot(obj.position[0] - position[0], obj.position[1] - position[1])
            <= dedup_radius
            for obj in grid.object_log
        )
        if not seen:
            logging.debug(f"Detected new {category} at {position}")
            grid.object_log.append(DetectedObject(category, position, grid.step))

    grid.trajectory.append(grid.world_to_cell(pose.x, pose.y))
    grid.step += 1
    return grid


def frontier_mask(grid: OccupancyGrid) -> np.ndarray:
    """ Free cells with an Unknown 4-neighbour. """
    unknown = grid.cells == CellState.UNKNOWN
    cross = ndimage.generate_binary_structure(2, 1)
    near_unknown = ndimage.binary_dilation(unknown, structure=cross)
    return near_unknown & (grid.cells == CellState.FREE)


def detect_frontiers(grid: OccupancyGrid, min_size: int = 3) -> List[Frontier]:
    labels, n_labels = ndimage.label(frontier_mask(grid), structure=np.ones((3, 3), dtype=int))
    if n_labels == 0:
        return []

    rows, cols = np.nonzero(labels)
    component = labels[rows, cols]
    # Stable so members of each component stay in row-major order.
    order = np.argsort(component, kind="stable")
    counts = np.bincount(component, minlength=n_labels + 1)[1:]
    splits = np.cumsum(counts)[:-1]

    frontiers = []
    for members in np.split(order, splits):
        if members.shape[0] < min_size:
            continue
        cells = np.stack((rows[members], cols[members]), axis=1)
        centroid = cells.mean(axis=0)
        nearest = int(np.argmin(((cells - centroid) ** 2).sum(axis=1)))
        frontiers.append(Frontier(cells, grid.cell_to_world(*cells[nearest])))
    logging.debug(f"Found {len(frontiers)} frontiers from {n_labels} components")
    return frontiers


def shortest_path_length(
    truth: Union[Scene, OccupancyGrid], start: Point, goal: Point
) -> Optional[float]:
    """ Optimal 8-connected geodesic in meters, or None when the goal cannot be reached. """
    if isinstance(truth, Scene):
        traversable = ~truth.blocked
        start_cell = truth.world_to_cell(*start)
        goal_cell = truth.world_to_cell(*goal)
    else:
        traversable = truth.cells == CellState.FREE
        start_cell = truth.world_to_cell(*start)
        goal_cell = truth.world_to_cell(*goal)

    rows, cols = traversable.shape
    for row, col in (start_cell, goal_cell):
        if not (0 <= row < rows and 0 <= col < cols) or not traversable[row, col]:
            return None

    dist = distance_field(traversable, [start_cell], truth.meters_per_cell)[goal_cell]
    return float(dist) if np.isfinite(dist) else None


def success_field(scene: Scene, target: str, success_distance: float = 1.0) -> np.ndarray:
    """Geodesic meters from every navigable cell to the nearest cell whose center is within
    success_distance of some instance of target. inf where no such cell can be reached.
    """
    rows, cols = np.nonzero(~scene.blocked)
    xs = (cols + 0.5) * scene.meters_per_cell
    ys = (rows + 0.5) * scene.meters_per_cell
    near = np.zeros(rows.shape, dtype=bool)
    for obj in scene.instances(target):
        near |= np.hypot(xs - obj.position[0], ys - obj.position[1]) <= success_distance
    sources = list(zip(rows[near].tolist(), cols[near].tolist()))
    return distance_field(~scene.blocked, sources, scene.meters_per_cell)


def shortest_to_target(
    scene: Scene, start: Point, target: str, success_distance: float = 1.0
) -> Optional[float]:
    """ Geodesic from start to the target's success disk; None when it cannot be reached. """
    row, col = scene.world_to_cell(*start)
    rows, cols = scene.shape
    if not (0 <= row < rows and 0 <= col < cols):
        return None
    dist = success_field(scene, target, success_distance)[row, col]
    return float(dist) if np.isfinite(dist) else None
