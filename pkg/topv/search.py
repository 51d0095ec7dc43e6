""" Shortest paths on boolean traversability rasters, 8-connected without corner cutting. """

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Dict, Final, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix  # type: ignore
from scipy.sparse.csgraph import dijkstra  # type: ignore

Cell = Tuple[int, int]

SQRT2: Final[float] = math.sqrt(2.0)

# (d_row, d_col, cost in cells)
MOVES: Final[Tuple[Tuple[int, int, float], ...]] = (
    (0, 1, 1.0),
    (1, 0, 1.0),
    (0, -1, 1.0),
    (-1, 0, 1.0),
    (1, 1, SQRT2),
    (1, -1, SQRT2),
    (-1, 1, SQRT2),
    (-1, -1, SQRT2),
)


def octile(a: Cell, b: Cell) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)


def path_cost(path: Sequence[Cell]) -> float:
    """ Length in cells, summed from step counts so equal paths give bit-identical costs. """
    straight = diagonal = 0
    for a, b in zip(path, path[1:]):
        if a[0] != b[0] and a[1] != b[1]:
            diagonal += 1
        else:
            straight += 1
    return straight + diagonal * SQRT2


def can_move(traversable: np.ndarray, cell: Cell, d_row: int, d_col: int) -> bool:
    rows, cols = traversable.shape
    row, col = cell[0] + d_row, cell[1] + d_col
    if not (0 <= row < rows and 0 <= col < cols) or not traversable[row, col]:
        return False
    if d_row != 0 and d_col != 0:
        return bool(traversable[cell[0] + d_row, cell[1]] and traversable[cell[0], cell[1] + d_col])
    return True


def bounding_box(mask: np.ndarray) -> Optional[Tuple[int, int, int, int]]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def grid_graph(traversable: np.ndarray) -> coo_matrix:
    """ Sparse adjacency of an 8-connected raster with unit and sqrt(2) edge weights. """
    rows, cols = traversable.shape
    index = np.arange(rows * cols).reshape(rows, cols)
    sources, targets, weights = [], [], []
    for d_row, d_col, cost in MOVES:
        if d_row < 0 or (d_row == 0 and d_col < 0):
            # Undirected, so each edge is added from one side only.
            continue
        r0, r1 = 0, rows - d_row
        c0, c1 = max(0, -d_col), cols - max(0, d_col)
        here = traversable[r0:r1, c0:c1]
        there = traversable[r0 + d_row : r1 + d_row, c0 + d_col : c1 + d_col]
        ok = here & there
        if d_row != 0 and d_col != 0:
            ok &= traversable[r0 + d_row : r1 + d_row, c0:c1]
            ok &= traversable[r0:r1, c0 + d_col : c1 + d_col]
        sources.append(index[r0:r1, c0:c1][ok])
        targets.append(index[r0 + d_row : r1 + d_row, c0 + d_col : c1 + d_col][ok])
        weights.append(np.full(int(ok.sum()), cost))
    n = rows * cols
    return coo_matrix(
        (np.concatenate(weights), (np.concatenate(sources), np.concatenate(targets))), shape=(n, n)
    )


def distance_field(
    traversable: np.ndarray, sources: Sequence[Cell], meters_per_cell: float = 1.0
) -> np.ndarray:
    """ Geodesic meters from the nearest source to every cell; inf where unreachable. """
    out = np.full(traversable.shape, np.inf)
    sources = [s for s in sources if traversable[s[0], s[1]]]
    if not sources:
        return out

    box = bounding_box(traversable)
    assert box is not None
    r0, r1, c0, c1 = box
    sub = traversable[r0:r1, c0:c1]
    graph = grid_graph(sub).tocsr()
    indices = [(row - r0) * sub.shape[1] + (col - c0) for row, col in sources]
    dist = dijkstra(graph, directed=False, indices=indices, min_only=True)
    out[r0:r1, c0:c1] = dist.reshape(sub.shape) * meters_per_cell
    out[~traversable] = np.inf
    return out


@dataclass
class SearchResult:
    path: Optional[List[Cell]]
    cost: float
    g: Dict[Cell, float]
    parents: Dict[Cell, Cell]

    def path_to(self, cell: Cell) -> List[Cell]:
        path = [cell]
        while path[-1] in self.parents:
            path.append(self.parents[path[-1]])
        return path[::-1]


def astar(traversable: np.ndarray, start: Cell, goal: Cell) -> SearchResult:
    """A* with the octile heuristic. Costs are in cells.

    When the goal is unreachable the search exhausts start's component, so g and parents cover
    every reachable cell.
    """
    g: Dict[Cell, float] = {start: 0.0}
    parents: Dict[Cell, Cell] = {}
    closed = set()
    # (f, h, counter, cell): the counter keeps pops deterministic on ties.
    frontier = [(octile(start, goal), octile(start, goal), 0, start)]
    counter = 1
    while frontier:
        _, _, _, cell = heapq.heappop(frontier)
        if cell in closed:
            continue
        closed.add(cell)
        if cell == goal:
            path = SearchResult(None, 0.0, g, parents).path_to(goal)
            return SearchResult(path, path_cost(path), g, parents)
        for d_row, d_col, cost in MOVES:
            if not can_move(traversable, cell, d_row, d_col):
                continue
            nxt = (cell[0] + d_row, cell[1] + d_col)
            new_g = g[cell] + cost
            if nxt in closed or new_g >= g.get(nxt, math.inf):
                continue
            g[nxt] = new_g
            parents[nxt] = cell
            h = octile(nxt, goal)
            heapq.heappush(frontier, (new_g + h, h, counter, nxt))
            counter += 1
    logging.debug(f"No path from {start} to {goal}, explored {len(closed)} cells")
    return SearchResult(None, math.inf, {c: g[c] for c in closed}, parents)
