""" Procedural apartments: a two-row grid of rooms joined by doors and furnished by room type. """

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from topv.config import WorldConfig
from topv.search import distance_field
from topv.worldsim import PlacedObject, Pose, Rect, Room, Scene, object_visible

TARGET_CATEGORIES: Tuple[str, ...] = ("chair", "bed", "plant", "toilet", "tv_monitor", "sofa")

ROOM_CONTENTS: Dict[str, Tuple[str, ...]] = {
    "bedroom": ("bed", "nightstand", "wardrobe", "chair", "plant"),
    "bathroom": ("toilet", "sink", "bathtub", "towel_rack"),
    "living_room": ("sofa", "tv_monitor", "coffee_table", "plant", "chair"),
    "kitchen": ("fridge", "stove", "dining_table", "chair", "sink"),
    "office": ("desk", "chair", "bookshelf", "tv_monitor", "plant"),
}

# (width, height) in meters
FOOTPRINTS: Dict[str, Tuple[float, float]] = {
    "bed": (1.0, 1.0),
    "nightstand": (0.4, 0.4),
    "wardrobe": (1.0, 0.5),
    "chair": (0.5, 0.5),
    "plant": (0.4, 0.4),
    "toilet": (0.4, 0.6),
    "sink": (0.6, 0.4),
    "bathtub": (1.0, 0.7),
    "towel_rack": (0.6, 0.2),
    "sofa": (1.0, 0.8),
    "tv_monitor": (0.8, 0.3),
    "coffee_table": (0.8, 0.5),
    "fridge": (0.7, 0.7),
    "stove": (0.6, 0.6),
    "dining_table": (1.0, 0.8),
    "desk": (1.0, 0.6),
    "bookshelf": (0.9, 0.3),
}

WALL_MARGIN = 0.5
OBJECT_GAP = 0.4
MAX_ATTEMPTS = 20


class InfeasibleSceneError(ValueError):
    """ The requested rooms and objects cannot be laid out. """


@dataclass(frozen=True)
class SceneSpec:
    n_rooms: int = 4
    room_size: Tuple[float, float] = (4.0, 4.0)
    objects_per_room: int = 3
    extra_doors: int = 0
    wall_thickness: float = 0.3
    door_width: float = 1.0

    def check(self) -> None:
        if self.n_rooms < 1:
            raise InfeasibleSceneError(f"Need at least one room, got {self.n_rooms}")
        if self.objects_per_room < 0 or self.extra_doors < 0:
            raise InfeasibleSceneError(f"Counts must be non-negative, got {self}")
        usable = min(self.room_size) - 2 * WALL_MARGIN
        if usable < 1.0:
            raise InfeasibleSceneError(f"Rooms of {self.room_size} m leave no space for furniture")
        if self.door_width + 2 * 0.3 > min(self.room_size):
            raise InfeasibleSceneError(
                f"Door of {self.door_width} m does not fit a {self.room_size} room"
            )
        if self.wall_thickness <= 0:
            raise InfeasibleSceneError(f"wall_thickness={self.wall_thickness} must be positive")


def grid_shape(n_rooms: int) -> Tuple[int, int]:
    """ (rows, cols) of the room grid. """
    if n_rooms == 1:
        return 1, 1
    return 2, int(math.ceil(n_rooms / 2))


def snake_cells(n_rooms: int) -> List[Tuple[int, int]]:
    """ Room i's (row, col): left to right along the bottom row, then back along the top. """
    rows, cols = grid_shape(n_rooms)
    cells = [(0, c) for c in range(cols)] + [(1, c) for c in reversed(range(cols))]
    return cells[:n_rooms] if rows == 2 else [(0, 0)]


def co_occurrence(target: str, category: str) -> float:
    """ How strongly seeing category suggests target is nearby, from the room tables. """
    if category == target:
        return 1.0
    with_category = [room for room, contents in ROOM_CONTENTS.items() if category in contents]
    if not with_category:
        return 0.5
    both = [room for room in with_category if target in ROOM_CONTENTS[room]]
    return 0.1 + 0.8 * len(both) / len(with_category)


class _Layout:
    def __init__(self, spec: SceneSpec) -> None:
        self.spec = spec
        self.rows, self.cols = grid_shape(spec.n_rooms)
        self.rw, self.rh = spec.room_size
        t = spec.wall_thickness
        self.width = self.cols * self.rw + (self.cols + 1) * t
        self.height = self.rows * self.rh + (self.rows + 1) * t

    def interior(self, row: int, col: int) -> Rect:
        t = self.spec.wall_thickness
        return Rect(t + col * (self.rw + t), t + row * (self.rh + t), self.rw, self.rh)

    def outer_walls(self) -> List[Rect]:
        t = self.spec.wall_thickness
        return [
            Rect(0.0, 0.0, self.width, t),
            Rect(0.0, self.height - t, self.width, t),
            Rect(0.0, 0.0, t, self.height),
            Rect(self.width - t, 0.0, t, self.height),
        ]

    def shared_wall(
        self, a: Tuple[int, int], b: Tuple[int, int], door_at: Optional[float]
    ) -> List[Rect]:
        """ The wall between two neighbouring grid cells, split around a door if door_at is set. """
        t = self.spec.wall_thickness
        door = self.spec.door_width
        (r0, c0), (r1, c1) = sorted([a, b])
        lo = self.interior(r0, c0)
        if r0 == r1:
            x, y0, y1 = lo.x1, lo.y - t, lo.y1 + t
            if door_at is None:
                return [Rect(x, y0, t, y1 - y0)]
            gap = lo.y + door_at
            return [Rect(x, y0, t, gap - y0), Rect(x, gap + door, t, y1 - gap - door)]
        y, x0, x1 = lo.y1, lo.x - t, lo.x1 + t
        if door_at is None:
            return [Rect(x0, y, x1 - x0, t)]
        gap = lo.x + door_at
        return [Rect(x0, y, gap - x0, t), Rect(gap + door, y, x1 - gap - door, t)]


def _place_objects(
    rng: np.random.Generator, room: Rect, kind: str, count: int
) -> List[PlacedObject]:
    contents = ROOM_CONTENTS[kind]
    chosen = rng.choice(len(contents), size=min(count, len(contents)), replace=False)
    placed: List[PlacedObject] = []
    for index in sorted(int(i) for i in chosen):
        category = contents[index]
        fw, fh = FOOTPRINTS[category]
        for _ in range(50):
            cx = rng.uniform(room.x + WALL_MARGIN + fw / 2, room.x1 - WALL_MARGIN - fw / 2)
            cy = rng.uniform(room.y + WALL_MARGIN + fh / 2, room.y1 - WALL_MARGIN - fh / 2)
            footprint = Rect(cx - fw / 2, cy - fh / 2, fw, fh)
            if all(_gap(footprint, other.footprint) >= OBJECT_GAP for other in placed):
                placed.append(PlacedObject(category, (cx, cy), footprint))
                break
        else:
            logging.debug(f"Could not fit a {category} into the {kind}")
    return placed


def _gap(a: Rect, b: Rect) -> float:
    dx = max(a.x - b.x1, b.x - a.x1, 0.0)
    dy = max(a.y - b.y1, b.y - a.y1, 0.0)
    return math.hypot(dx, dy)


def reachable_approach(
    scene: Scene, obj: PlacedObject, dist: np.ndarray, config: WorldConfig = WorldConfig()
) -> bool:
    """ Some reachable cell within the success distance sees the object when facing it. """
    rows, cols = np.nonzero(np.isfinite(dist))
    xs = (cols + 0.5) * scene.meters_per_cell
    ys = (rows + 0.5) * scene.meters_per_cell
    gaps = np.hypot(xs - obj.position[0], ys - obj.position[1])
    # Keep a cell of slack so the policy can stop on a cell that also passes the success check.
    candidates = np.flatnonzero(gaps <= config.success_distance - scene.meters_per_cell)
    for k in candidates[np.argsort(gaps[candidates], kind="stable")][:20]:
        heading = math.atan2(obj.position[1] - ys[k], obj.position[0] - xs[k])
        if object_visible(scene, Pose(float(xs[k]), float(ys[k]), heading), obj, config):
            return True
    return False


def _attempt(rng: np.random.Generator, spec: SceneSpec, meters_per_cell: float) -> Optional[Scene]:
    layout = _Layout(spec)
    cells = snake_cells(spec.n_rooms)
    kinds = list(ROOM_CONTENTS)
    rng.shuffle(kinds)

    walls = layout.outer_walls()
    rooms = [Room(kinds[i % len(kinds)], layout.interior(*cell)) for i, cell in enumerate(cells)]

    def door_offset() -> float:
        span = min(layout.rw, layout.rh) - spec.door_width - 0.6
        return 0.3 + float(rng.uniform(0.0, span))

    doors = {tuple(sorted([cells[i], cells[i + 1]])) for i in range(len(cells) - 1)}
    candidates = sorted(
        {
            tuple(sorted([a, b]))
            for a in cells
            for b in cells
            if a != b and abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1
        }
        - doors
    )
    if spec.extra_doors and candidates:
        n_extra = min(spec.extra_doors, len(candidates))
        picks = rng.choice(len(candidates), size=n_extra, replace=False)
        doors |= {candidates[int(i)] for i in picks}

    for r in range(layout.rows):
        for c in range(layout.cols):
            for other in ((r, c + 1), (r + 1, c)):
                if other[0] >= layout.rows or other[1] >= layout.cols:
                    continue
                pair = tuple(sorted([(r, c), other]))
                walls += layout.shared_wall(
                    (r, c), other, door_offset() if pair in doors else None
                )

    for r in range(layout.rows):
        for c in range(layout.cols):
            if (r, c) not in cells:
                walls.append(layout.interior(r, c))

    objects: List[PlacedObject] = []
    for room in rooms:
        objects += _place_objects(rng, room.rect, room.kind, spec.objects_per_room)

    first = rooms[0].rect
    start = None
    for _ in range(50):
        x = rng.uniform(first.x + WALL_MARGIN, first.x1 - WALL_MARGIN)
        y = rng.uniform(first.y + WALL_MARGIN, first.y1 - WALL_MARGIN)
        heading = math.radians(30.0 * int(rng.integers(12)))
        if all(_gap(Rect(x, y, 0.0, 0.0), o.footprint) > 0.3 for o in objects):
            start = Pose(float(x), float(y), heading)
            break
    if start is None:
        return None

    targets = tuple(c for c in TARGET_CATEGORIES if any(o.category == c for o in objects))
    if not targets:
        return None
    scene = Scene(
        bounds=(layout.width, layout.height),
        walls=tuple(walls),
        objects=tuple(objects),
        start=start,
        targets=targets,
        rooms=tuple(rooms),
        meters_per_cell=meters_per_cell,
    )
    if not scene.is_navigable(start.x, start.y):
        return None

    dist = distance_field(~scene.blocked, [scene.world_to_cell(start.x, start.y)])
    for obj in objects:
        if obj.category in targets and not reachable_approach(scene, obj, dist):
            logging.debug(f"{obj.category} at {obj.position} is not reachable, retrying")
            return None
    return scene


def generate_scene(
    seed: int, spec: SceneSpec = SceneSpec(), meters_per_cell: float = 0.05
) -> Scene:
    spec.check()
    rng = np.random.default_rng(seed)
    for attempt in range(MAX_ATTEMPTS):
        scene = _attempt(rng, spec, meters_per_cell)
        if scene is not None:
            logging.debug(f"Scene {seed} generated on attempt {attempt}")
            return scene
    raise InfeasibleSceneError(f"No valid layout for seed {seed} after {MAX_ATTEMPTS} attempts")


def room_connectivity(scene: Scene) -> np.ndarray:
    """ Pairwise reachability between rooms, judged from each room's first navigable cell. """
    seeds = []
    for room in scene.rooms:
        r0, r1, c0, c1 = room.rect.cell_span(scene.meters_per_cell)
        rows, cols = np.nonzero(~scene.blocked[r0:r1, c0:c1])
        seeds.append((int(rows[0]) + r0, int(cols[0]) + c0))
    n = len(seeds)
    connected = np.zeros((n, n), dtype=bool)
    for i, cell in enumerate(seeds):
        dist = distance_field(~scene.blocked, [cell])
        connected[i] = [np.isfinite(dist[s]) for s in seeds]
    return connected


def sample_episode_targets(
    scene: Scene,
    n_episodes: int,
    rng: np.random.Generator,
    categories: Sequence[str] = TARGET_CATEGORIES,
) -> List[str]:
    present = [c for c in categories if c in scene.targets]
    if not present:
        raise InfeasibleSceneError("Scene holds none of the target categories")
    return [present[int(i)] for i in rng.integers(len(present), size=n_episodes)]
