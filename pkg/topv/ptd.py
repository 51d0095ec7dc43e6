""" Potential-target-driven value fusion and moving-location selection. """

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import matplotlib  # type: ignore
import numpy as np
from PIL import Image  # type: ignore
from scipy import ndimage  # type: ignore

from topv.avpg import KeyAreaMarker
from topv.config import FusionConfig
from topv.topmap import CellState, OccupancyGrid
from topv.worldsim import Point


class NoFreeCellsError(RuntimeError):
    """ The map has no known-Free cell to move to. """


@dataclass(frozen=True)
class TargetEstimate:
    position: Point

    def __post_init__(self) -> None:
        assert all(math.isfinite(v) for v in self.position), f"Bad target {self.position}"

    @classmethod
    def clamped(cls, position: Point, grid: OccupancyGrid) -> "TargetEstimate":
        return cls(grid.clamp_point(*position))


@dataclass(frozen=True)
class MarkerScores:
    scores: Tuple[float, ...]

    def __post_init__(self) -> None:
        for alpha in self.scores:
            if not 0.0 <= alpha <= 1.0:
                raise ValueError(f"Marker score {alpha} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True, eq=False)
class ValueMap:
    values: np.ndarray
    origin: Point
    meters_per_cell: float
    centers: Tuple[Point, ...] = ()
    peaks: Tuple[float, ...] = ()
    sigmas: Tuple[float, ...] = ()

    def value_at(self, x: float, y: float) -> float:
        row = int(math.floor((y - self.origin[1]) / self.meters_per_cell))
        col = int(math.floor((x - self.origin[0]) / self.meters_per_cell))
        return float(self.values[row, col])

    def to_image(self, cmap: str = "viridis") -> Image.Image:
        """ Heat map with row 0 at the top, matching the prompt map's orientation. """
        top = float(self.values.max())
        scaled = self.values / top if top > 0 else self.values
        rgba = matplotlib.colormaps[cmap](np.flipud(scaled))
        return Image.fromarray((rgba[..., :3] * 255).astype(np.uint8))

    def save(self, path: Union[str, Path]) -> None:
        self.to_image().save(Path(path).with_suffix(".png"), format="PNG")


def unit_gaussian(coords: np.ndarray, mean: float, sigma: float) -> np.ndarray:
    """ One axis of an isotropic unit-peak Gaussian. """
    return np.exp(-((coords - mean) ** 2) / (2.0 * sigma ** 2))


def sigma_for(
    center: Point, others: Sequence[Point], config: FusionConfig = FusionConfig(), peak: float = 1.0
) -> float:
    """Spread such that the component falls to the decay level at its farthest other center.

    Relative decay is a fraction of the component's own peak. Absolute decay targets the value
    itself, which has no solution when the peak is already at or below it; those fall back to
    the floor.
    """
    if len(others) == 0:
        return config.sigma_floor
    d = float(np.max(np.linalg.norm(np.asarray(others, dtype=float) - np.asarray(center), axis=1)))
    if d == 0.0:
        return config.sigma_floor
    if config.decay_mode == "relative":
        return d / math.sqrt(2.0 * math.log(1.0 / config.decay_level))
    if peak <= config.decay_level:
        logging.debug(f"Peak {peak} never decays to {config.decay_level}, using the floor")
        return config.sigma_floor
    return d / math.sqrt(2.0 * math.log(peak / config.decay_level))


def fusion_components(
    markers: Sequence[KeyAreaMarker],
    scores: MarkerScores,
    target: Optional[TargetEstimate],
    config: FusionConfig = FusionConfig(),
) -> Tuple[List[Point], List[float]]:
    assert len(scores) == len(markers), f"{len(scores)} scores for {len(markers)} markers"
    centers = [m.centroid for m in markers]
    peaks = list(scores.scores)
    if target is not None:
        centers.append(target.position)
        peaks.append(config.beta)
    return centers, peaks


def fuse(
    markers: Sequence[KeyAreaMarker],
    scores: MarkerScores,
    target: Optional[TargetEstimate],
    grid: OccupancyGrid,
    config: FusionConfig = FusionConfig(),
    sigmas: Optional[Sequence[float]] = None,
) -> ValueMap:
    """Sum of unit-peak Gaussians weighted by the marker scores and beta for the target.

    Evaluated at every cell center of grid. sigmas, when given, replaces the per-component
    spreads, in marker order with the target's last.
    """
    centers, peaks = fusion_components(markers, scores, target, config)
    if sigmas is None:
        sigmas = [
            sigma_for(c, centers[:i] + centers[i + 1 :], config, peaks[i])
            for i, c in enumerate(centers)
        ]
    assert len(sigmas) == len(centers)

    xs, ys = grid.cell_centers()
    values = np.zeros((grid.height, grid.width))
    for (cx, cy), peak, sigma in zip(centers, peaks, sigmas):
        values += peak * np.outer(unit_gaussian(ys, cy, sigma), unit_gaussian(xs, cx, sigma))
    assert np.all(np.isfinite(values)) and np.all(values >= 0)
    return ValueMap(
        values, grid.origin, grid.meters_per_cell, tuple(centers), tuple(peaks), tuple(sigmas)
    )


def exclusion_mask(grid: OccupancyGrid, points: Sequence[Point], radius: float) -> np.ndarray:
    """ Cells whose centers lie within radius of any point. """
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    if not points:
        return mask
    xs, ys = grid.cell_centers()
    for px, py in points:
        mask |= ((ys[:, None] - py) ** 2 + (xs[None, :] - px) ** 2) <= radius ** 2
    return mask


def _allowed(grid: OccupancyGrid, exclude: Optional[np.ndarray]) -> np.ndarray:
    free = grid.cells == CellState.FREE
    if not free.any():
        raise NoFreeCellsError("No known-Free cell to select")
    if exclude is None:
        return free
    allowed = free & ~exclude
    if not allowed.any():
        logging.debug("Every Free cell is excluded, ignoring the exclusion")
        return free
    return allowed


def select_moving_location(
    vmap: ValueMap, grid: OccupancyGrid, exclude: Optional[np.ndarray] = None
) -> Point:
    """ Highest-valued known-Free cell, first in row-major order on ties. """
    allowed = _allowed(grid, exclude)
    masked = np.where(allowed, vmap.values, -np.inf)
    row, col = np.unravel_index(int(np.argmax(masked)), masked.shape)
    return grid.cell_to_world(int(row), int(col))


def select_moving_location_max(
    markers: Sequence[KeyAreaMarker],
    scores: MarkerScores,
    target: Optional[TargetEstimate],
    grid: OccupancyGrid,
    config: FusionConfig = FusionConfig(),
    exclude: Optional[np.ndarray] = None,
) -> Point:
    """Picks the single best center, no fusion, then snaps it to the nearest Free cell.

    Markers beat the target on ties and lower ids beat higher ones.
    """
    centers, peaks = fusion_components(markers, scores, target, config)
    if not centers:
        raise ValueError("No markers or target to choose from")
    allowed = _allowed(grid, exclude)
    free = grid.cells == CellState.FREE
    _, (near_rows, near_cols) = ndimage.distance_transform_edt(~free, return_indices=True)

    snapped = []
    for k in sorted(range(len(centers)), key=lambda k: -peaks[k]):
        row, col = grid.world_to_cell(*grid.clamp_point(*centers[k]))
        cell = (int(near_rows[row, col]), int(near_cols[row, col]))
        if allowed[cell]:
            return grid.cell_to_world(*cell)
        snapped.append(cell)
    return grid.cell_to_world(*snapped[0])
