""" Dynamic map scaling: zoom a reasoner-chosen sub-region until overlapping labels separate. """

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from topv.avpg import MapFrame, PromptMap, TextBox, iou, layout_text_boxes, render_prompt_map
from topv.config import RenderConfig, ScalingRule
from topv.reasoner import Reasoner, ReasonerQuery, Role, query
from topv.topmap import OccupancyGrid
from topv.worldsim import Point


@dataclass(frozen=True)
class CropWindow:
    center: Point
    half_extent: Tuple[float, float]

    @property
    def rect(self) -> Tuple[float, float, float, float]:
        (cx, cy), (hw, hh) = self.center, self.half_extent
        return (cx - hw, cy - hh, cx + hw, cy + hh)


@dataclass(frozen=True)
class ScalingResult:
    per_object_factors: Tuple[float, ...]
    f_scale: float
    pair: Optional[Tuple[int, int]] = None
    pair_iou: float = 0.0
    pair_iou_after: float = 0.0


def nearest_object(index: int, points: Sequence[Point]) -> Optional[int]:
    """ Index of the closest other point, lowest index on ties; None with fewer than two points. """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        return None
    dist = np.linalg.norm(pts - pts[index], axis=1)
    dist[index] = np.inf
    return int(np.argmin(dist))


def occlusion_factor(overlap: float) -> float:
    """ 1 / (1 - IoU); complete overlap maps to infinity. """
    if overlap >= 1.0:
        return math.inf
    return 1.0 / (1.0 - overlap)


def separating_factor(a: TextBox, b: TextBox) -> float:
    """Smallest zoom of the anchor offset after which two fixed-size boxes no longer overlap.

    Boxes keep their pixel size under zoom, so they part once either the horizontal offset covers
    the left box's width or the vertical offset covers the lower box's height.
    """
    dx = b.anchor[0] - a.anchor[0]
    dy = b.anchor[1] - a.anchor[1]
    left = a if dx >= 0 else b
    # Pixel rows grow downward and boxes hang above their anchor.
    lower = b if dy >= 0 else a
    need_x = (left.rect[2] - left.rect[0]) / abs(dx) if dx != 0 else math.inf
    need_y = (lower.rect[3] - lower.rect[1]) / abs(dy) if dy != 0 else math.inf
    return max(1.0, min(need_x, need_y))


def scaled_rect(box: TextBox, about: Point, factor: float) -> Tuple[float, float, float, float]:
    """ The box re-laid-out after zooming by factor around a pixel, at unchanged box size. """
    ax = about[0] + (box.anchor[0] - about[0]) * factor
    ay = about[1] + (box.anchor[1] - about[1]) * factor
    width = box.rect[2] - box.rect[0]
    height = box.rect[3] - box.rect[1]
    return (ax, ay - height, ax + width, ay)


def scaling_factor(
    textboxes: Sequence[TextBox], max_scale: float = 5.0, rule: ScalingRule = "iou"
) -> ScalingResult:
    """Per-box factor against each box's nearest neighbour and their clamped maximum.

    "iou" uses f = 1 / (1 - IoU). "separating" uses the exact zoom that makes the pair disjoint.
    """
    if len(textboxes) < 2:
        return ScalingResult(tuple(1.0 for _ in textboxes), 1.0)

    anchors = [box.anchor for box in textboxes]
    factors: List[float] = []
    overlaps: List[float] = []
    neighbours: List[int] = []
    for i, box in enumerate(textboxes):
        j = nearest_object(i, anchors)
        assert j is not None
        overlap = iou(box.rect, textboxes[j].rect)
        if rule == "iou":
            factors.append(occlusion_factor(overlap))
        else:
            factors.append(separating_factor(box, textboxes[j]))
        overlaps.append(overlap)
        neighbours.append(j)

    best = int(np.argmax(factors))
    f_scale = min(max_scale, max(1.0, factors[best]))
    pair = (best, neighbours[best])
    unclamped = factors[best] if math.isfinite(factors[best]) else f_scale
    after = iou(
        scaled_rect(textboxes[pair[0]], anchors[pair[0]], unclamped),
        scaled_rect(textboxes[pair[1]], anchors[pair[0]], unclamped),
    )
    if after > 0 and overlaps[best] > 0:
        logging.debug(f"Pair {pair} still overlaps, IoU={after:.4f} at zoom {unclamped:.3f}")
    return ScalingResult(tuple(factors), f_scale, pair, overlaps[best], after)


def crop_window(
    center: Point, bounds: Tuple[float, float, float, float], margin: float = 0.0
) -> CropWindow:
    """Maximal edge-aligned window around center.

    The center is first clamped into bounds, at least margin away from every edge, or onto the
    midline when the map is narrower than twice the margin.
    """
    xmin, ymin, xmax, ymax = bounds
    mx = min(margin, (xmax - xmin) / 2)
    my = min(margin, (ymax - ymin) / 2)
    cx = min(max(center[0], xmin + mx), xmax - mx)
    cy = min(max(center[1], ymin + my), ymax - my)
    return CropWindow((cx, cy), (min(cx - xmin, xmax - cx), min(cy - ymin, ymax - cy)))


def zoom_frame(window: CropWindow, pixels_per_meter: float, raster_size: int) -> MapFrame:
    """ The crop window at the new scale, cut down to what fits in the raster around the center. """
    (cx, cy), (hw, hh) = window.center, window.half_extent
    reach = raster_size / (2 * pixels_per_meter)
    hw, hh = min(hw, reach), min(hh, reach)
    return MapFrame(cx - hw, cy - hh, cx + hw, cy + hh, pixels_per_meter)


def apply_dms(
    grid: OccupancyGrid,
    prompt_map: PromptMap,
    reasoner: Reasoner,
    target: str,
    layers: RenderConfig = RenderConfig(),
) -> PromptMap:
    """Asks the reasoner for a region of interest and re-renders it zoomed in.

    A decline returns the input map untouched. The zoom applied is the ratio of the two maps'
    pixels_per_meter.
    """
    answer = query(reasoner, ReasonerQuery(Role.SELECT_REGION, prompt_map, target))
    if answer.region is None:
        return prompt_map

    # Far enough from the edges that even the tightest zoom fills the raster.
    tightest = layers.raster_size / (2 * prompt_map.pixels_per_meter * layers.max_scale)
    window = crop_window(answer.region, grid.bounds, margin=tightest)
    if window.center != answer.region:
        logging.debug(f"Region center {answer.region} moved to {window.center}")

    xmin, ymin, xmax, ymax = window.rect
    inside = [
        box
        for box in prompt_map.textboxes
        if xmin <= box.position[0] <= xmax and ymin <= box.position[1] <= ymax
    ]
    scaling = scaling_factor(inside, layers.max_scale, layers.scaling_rule)
    frame = zoom_frame(window, prompt_map.pixels_per_meter * scaling.f_scale, layers.raster_size)
    logging.debug(
        f"Zooming on {window.center} by {scaling.f_scale:.3f} into {frame.window}, "
        f"pair IoU {scaling.pair_iou:.3f} -> {scaling.pair_iou_after:.3f}"
    )

    objects = [obj for obj in prompt_map.objects if frame.contains(*obj.position)]
    markers = [m for m in prompt_map.markers if frame.contains(*m.centroid)]
    zoomed = render_prompt_map(
        grid,
        markers,
        layout_text_boxes(objects, frame),
        prompt_map.pose,
        frame,
        layers,
        objects,
        prompt_map.frontiers,
    )
    return zoomed
