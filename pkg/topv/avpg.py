""" Adaptive visual prompts: key-area markers, text boxes and the rendered top-view map. """

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw, ImageFont  # type: ignore
from sklearn.cluster import DBSCAN  # type: ignore

from topv.config import ClusterConfig, RenderConfig
from topv.io_utils import write_json
from topv.topmap import DetectedObject, Frontier, OccupancyGrid
from topv.worldsim import Point, Pose

Color = Tuple[int, int, int]
PixelRect = Tuple[float, float, float, float]

GLYPH_HEIGHT = 12
GLYPH_WIDTH = 7
BOX_PADDING = 4

PALETTE: Dict[str, Color] = {
    "free": (235, 235, 235),
    "obstacle": (40, 40, 40),
    "unknown": (150, 150, 150),
    "frontier": (60, 110, 230),
    "trajectory": (240, 140, 20),
    "agent": (220, 30, 30),
    "marker": (30, 160, 60),
    "grid": (120, 160, 200),
}


@dataclass(frozen=True)
class MapFrame:
    """ An axis-aligned world window drawn at a fixed scale; pixel y grows downward. """

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    pixels_per_meter: float

    @property
    def window(self) -> Tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    @property
    def size(self) -> Tuple[int, int]:
        """ (width, height) in pixels. """
        return (
            max(1, int(round((self.xmax - self.xmin) * self.pixels_per_meter))),
            max(1, int(round((self.ymax - self.ymin) * self.pixels_per_meter))),
        )

    def world_to_pixel(self, x: float, y: float) -> Point:
        return ((x - self.xmin) * self.pixels_per_meter, (self.ymax - y) * self.pixels_per_meter)

    def pixel_to_world(self, px: float, py: float) -> Point:
        return (self.xmin + px / self.pixels_per_meter, self.ymax - py / self.pixels_per_meter)

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    @classmethod
    def of_grid(cls, grid: OccupancyGrid, pixels_per_meter: float) -> "MapFrame":
        return cls(*grid.bounds, pixels_per_meter)


@dataclass(frozen=True, eq=False)
class KeyAreaMarker:
    id: int
    centroid: Point
    members: np.ndarray

    @property
    def label(self) -> str:
        return f"m{self.id}"


@dataclass(frozen=True)
class TextBox:
    label: str
    anchor: Point
    rect: PixelRect
    position: Point

    @property
    def area(self) -> float:
        return (self.rect[2] - self.rect[0]) * (self.rect[3] - self.rect[1])


def iou(a: PixelRect, b: PixelRect) -> float:
    width = min(a[2], b[2]) - max(a[0], b[0])
    height = min(a[3], b[3]) - max(a[1], b[1])
    if width <= 0 or height <= 0:
        return 0.0
    inter = width * height
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def _marker(id: int, members: np.ndarray) -> KeyAreaMarker:
    centroid = members.mean(axis=0)
    return KeyAreaMarker(id, (float(centroid[0]), float(centroid[1])), members)


def cluster_key_areas(
    points: Sequence[Point], config: ClusterConfig = ClusterConfig()
) -> List[KeyAreaMarker]:
    """Density-based key areas over object positions and frontier midpoints.

    A point's neighbourhood includes itself, so min_pts=2 needs one true neighbour within epsilon.
    Points are put in a canonical order first, which makes border point assignment, and so the
    whole partition, independent of input order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return []
    assert np.all(np.isfinite(pts)), f"Non-finite key area points {pts}"

    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    labels = DBSCAN(eps=config.epsilon, min_samples=config.min_pts).fit_predict(pts)
    n_areas = int(labels.max()) + 1 if labels.size else 0
    logging.debug(f"{n_areas} key areas and {np.count_nonzero(labels < 0)} outliers")
    return [_marker(k + 1, pts[labels == k]) for k in range(n_areas)]


def merge_areas(
    markers: Sequence[KeyAreaMarker], config: ClusterConfig = ClusterConfig()
) -> List[KeyAreaMarker]:
    """ Merges the lowest-id pair of areas within epsilon of each other until none are left. """
    areas = [m.members for m in sorted(markers, key=lambda m: m.id)]
    merged = True
    while merged:
        merged = False
        centroids = [a.mean(axis=0) for a in areas]
        for i in range(len(areas)):
            for j in range(i + 1, len(areas)):
                if np.linalg.norm(centroids[i] - centroids[j]) <= config.epsilon:
                    areas[i] = np.concatenate((areas[i], areas[j]))
                    del areas[j]
                    merged = True
                    break
            if merged:
                break
    return [_marker(k + 1, members) for k, members in enumerate(areas)]


def key_area_points(
    objects: Sequence[DetectedObject], frontiers: Sequence[Frontier]
) -> List[Point]:
    return [obj.position for obj in objects] + [f.midpoint for f in frontiers]


def layout_text_boxes(objects: Sequence[DetectedObject], frame: MapFrame) -> List[TextBox]:
    """ One fixed-size box per object inside the frame, bottom-left corner on the object. """
    boxes = []
    for obj in objects:
        if not frame.contains(*obj.position):
            continue
        ax, ay = frame.world_to_pixel(*obj.position)
        width = GLYPH_WIDTH * len(obj.category) + BOX_PADDING
        boxes.append(
            TextBox(obj.category, (ax, ay), (ax, ay - GLYPH_HEIGHT, ax + width, ay), obj.position)
        )
    return boxes


@lru_cache(maxsize=1)
def _font() -> Any:
    return ImageFont.load_default()


@dataclass(frozen=True, eq=False)
class PromptMap:
    image: Image.Image
    frame: MapFrame
    textboxes: Tuple[TextBox, ...]
    markers: Tuple[KeyAreaMarker, ...]
    objects: Tuple[DetectedObject, ...]
    frontiers: Tuple[Frontier, ...]
    pose: Pose
    layers: RenderConfig
    legend: Dict[str, Color] = field(default_factory=lambda: dict(PALETTE))

    @property
    def crop_window(self) -> Tuple[float, float, float, float]:
        return self.frame.window

    @property
    def pixels_per_meter(self) -> float:
        return self.frame.pixels_per_meter

    def world_to_pixel(self, x: float, y: float) -> Point:
        return self.frame.world_to_pixel(x, y)

    def pixel_to_world(self, px: float, py: float) -> Point:
        return self.frame.pixel_to_world(px, py)

    def marker_table(self) -> Dict[str, List[float]]:
        return {m.label: [round(m.centroid[0], 3), round(m.centroid[1], 3)] for m in self.markers}

    def metadata(self) -> Dict[str, Any]:
        """ The sidecar: everything a reasoner may know besides the pixels. """
        meta: Dict[str, Any] = {
            "crop_window": [round(v, 4) for v in self.crop_window],
            "pixels_per_meter": self.pixels_per_meter,
            "image_size": list(self.image.size),
            "coordinate_frame": "meters; x grows right, y grows up; pixel = "
            "((x - xmin) * ppm, (ymax - y) * ppm)",
            "markers": self.marker_table(),
            "frontiers": [
                {"midpoint": [round(f.midpoint[0], 3), round(f.midpoint[1], 3)], "size": f.size}
                for f in self.frontiers
            ],
            "agent": {
                "position": [round(self.pose.x, 3), round(self.pose.y, 3)],
                "heading_degrees": round(math.degrees(self.pose.heading), 3),
            },
            "legend": {name: list(color) for name, color in self.legend.items()},
        }
        if self.layers.textboxes:
            meta["textboxes"] = [
                {
                    "label": box.label,
                    "rect": [round(v, 3) for v in box.rect],
                    "position": [round(box.position[0], 3), round(box.position[1], 3)],
                }
                for box in self.textboxes
            ]
        return meta

    def png_bytes(self) -> bytes:
        buffer = io.BytesIO()
        self.image.save(buffer, format="PNG")
        return buffer.getvalue()

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        self.image.save(path.with_suffix(".png"), format="PNG")
        write_json(path.with_suffix(".json"), self.metadata())


def _sample_cells(grid: OccupancyGrid, frame: MapFrame) -> Tuple[np.ndarray, np.ndarray]:
    """ Grid (row, col) under every pixel center, nearest neighbour. """
    width, height = frame.size
    xs = frame.xmin + (np.arange(width) + 0.5) / frame.pixels_per_meter
    ys = frame.ymax - (np.arange(height) + 0.5) / frame.pixels_per_meter
    cols = np.floor((xs - grid.origin[0]) / grid.meters_per_cell).astype(int)
    rows = np.floor((ys - grid.origin[1]) / grid.meters_per_cell).astype(int)
    return np.clip(rows, 0, grid.height - 1), np.clip(cols, 0, grid.width - 1)


def _draw_coordinates(draw: ImageDraw.ImageDraw, frame: MapFrame) -> None:
    width, height = frame.size
    label_every = max(1, int(math.ceil(25 / frame.pixels_per_meter)))
    for x in range(int(math.ceil(frame.xmin)), int(math.floor(frame.xmax)) + 1):
        px, _ = frame.world_to_pixel(x, 0.0)
        draw.line([(px, 0), (px, height)], fill=PALETTE["grid"], width=1)
        if x % label_every == 0:
            draw.text((px + 2, height - GLYPH_HEIGHT - 2), str(x), fill=(0, 0, 0), font=_font())
    for y in range(int(math.ceil(frame.ymin)), int(math.floor(frame.ymax)) + 1):
        _, py = frame.world_to_pixel(0.0, y)
        draw.line([(0, py), (width, py)], fill=PALETTE["grid"], width=1)
        if y % label_every == 0:
            draw.text((2, py - GLYPH_HEIGHT), str(y), fill=(0, 0, 0), font=_font())


def _draw_legend(draw: ImageDraw.ImageDraw, legend: Dict[str, Color]) -> None:
    entries = [name for name in legend if name != "grid"]
    box = [0, 0, 96, 4 + GLYPH_HEIGHT * len(entries)]
    draw.rectangle(box, fill=(255, 255, 255), outline=(0, 0, 0))
    for i, name in enumerate(entries):
        top = 2 + GLYPH_HEIGHT * i
        draw.rectangle([4, top + 2, 12, top + 10], fill=legend[name])
        draw.text((16, top), name, fill=(0, 0, 0), font=_font())


def render_prompt_map(
    grid: OccupancyGrid,
    markers: Sequence[KeyAreaMarker],
    textboxes: Sequence[TextBox],
    pose: Pose,
    frame: MapFrame,
    layers: RenderConfig = RenderConfig(),
    objects: Sequence[DetectedObject] = (),
    frontiers: Sequence[Frontier] = (),
) -> PromptMap:
    """Draws the top-view prompt map. A pure function of its inputs.

    Layer switches drop exactly one layer each: history hides the trajectory, obstacle paints
    obstacles as unknown, textboxes hides the labels (and withholds them from the sidecar),
    coordinate hides the meter grid.
    """
    rows, cols = _sample_cells(grid, frame)
    states = grid.cells[rows[:, None], cols[None, :]]
    colors = np.array(
        [
            PALETTE["unknown"],
            PALETTE["free"],
            PALETTE["obstacle"] if layers.obstacle else PALETTE["unknown"],
        ],
        dtype=np.uint8,
    )
    rgb = colors[states]

    if frontiers:
        mask = np.zeros(grid.cells.shape, dtype=bool)
        for frontier in frontiers:
            mask[frontier.cells[:, 0], frontier.cells[:, 1]] = True
        rgb[mask[rows[:, None], cols[None, :]]] = PALETTE["frontier"]

    image = Image.fromarray(rgb)
    draw = ImageDraw.Draw(image)

    if layers.coordinate:
        _draw_coordinates(draw, frame)

    if layers.history and len(grid.trajectory) > 1:
        path = [frame.world_to_pixel(*grid.cell_to_world(*cell)) for cell in grid.trajectory]
        draw.line(path, fill=PALETTE["trajectory"], width=2)

    for marker in markers:
        mx, my = frame.world_to_pixel(*marker.centroid)
        draw.ellipse([mx - 6, my - 6, mx + 6, my + 6], fill=PALETTE["marker"], outline=(0, 0, 0))
        draw.text((mx + 8, my - 6), marker.label, fill=PALETTE["marker"], font=_font())

    if layers.textboxes:
        for box in textboxes:
            draw.rectangle(list(box.rect), fill=(255, 255, 255), outline=(0, 0, 0))
            draw.text((box.rect[0] + 2, box.rect[1]), box.label, fill=(0, 0, 0), font=_font())

    ax, ay = frame.world_to_pixel(pose.x, pose.y)
    draw.ellipse([ax - 5, ay - 5, ax + 5, ay + 5], fill=PALETTE["agent"])
    tip = (ax + 14 * math.cos(pose.heading), ay - 14 * math.sin(pose.heading))
    draw.line([(ax, ay), tip], fill=PALETTE["agent"], width=2)

    _draw_legend(draw, PALETTE)

    return PromptMap(
        image=image,
        frame=frame,
        textboxes=tuple(textboxes) if layers.textboxes else (),
        markers=tuple(markers),
        objects=tuple(objects) if layers.textboxes else (),
        frontiers=tuple(frontiers),
        pose=pose,
        layers=layers,
    )


def build_prompt_map(
    grid: OccupancyGrid,
    frontiers: Sequence[Frontier],
    pose: Pose,
    cluster: ClusterConfig = ClusterConfig(),
    layers: RenderConfig = RenderConfig(),
    frame: Optional[MapFrame] = None,
) -> PromptMap:
    """ Clusters, merges, lays out and renders the current map in one go. """
    objects = list(grid.object_log)
    markers = merge_areas(cluster_key_areas(key_area_points(objects, frontiers), cluster), cluster)
    frame = frame if frame is not None else MapFrame.of_grid(grid, layers.pixels_per_meter)
    textboxes = layout_text_boxes(objects, frame)
    return render_prompt_map(grid, markers, textboxes, pose, frame, layers, objects, frontiers)
