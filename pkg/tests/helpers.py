""" Prompt-map fixtures and stub reasoners for the pipeline tests. """

from typing import Optional, Sequence, Tuple

from topv.avpg import PromptMap, build_prompt_map
from topv.config import ClusterConfig, RenderConfig
from topv.reasoner import Reasoner, ReasonerAnswer, ReasonerQuery, Role
from topv.topmap import CellState, DetectedObject, OccupancyGrid, detect_frontiers
from topv.worldsim import Point, Pose


def open_grid(objects: Sequence[Tuple[str, Point]] = ()) -> OccupancyGrid:
    """ A 10m x 10m map, free everywhere except its unknown top strip. """
    grid = OccupancyGrid(200, 200, 0.05, (0.0, 0.0))
    grid.cells[:180, :] = CellState.FREE
    grid.object_log = [DetectedObject(category, position, 0) for category, position in objects]
    grid.trajectory = [(40, 40), (40, 41), (41, 42)]
    return grid


def prompt_map_of(grid: OccupancyGrid, layers: RenderConfig = RenderConfig()) -> PromptMap:
    return build_prompt_map(grid, detect_frontiers(grid), Pose(2.0, 2.0), ClusterConfig(), layers)


class FixedReasoner(Reasoner):
    """ Answers every role with fixed values and records the queries it saw. """

    name = "fixed"

    def __init__(
        self,
        region: Optional[Point] = None,
        target: Point = (0.0, 0.0),
        scores: Optional[Sequence[float]] = None,
    ) -> None:
        self.region = region
        self.target = target
        self.scores = scores
        self.queries = []

    def answer(self, q: ReasonerQuery) -> ReasonerAnswer:
        self.queries.append(q)
        if q.role is Role.SELECT_REGION:
            return ReasonerAnswer(q.role, region=self.region, source=self.name)
        elif q.role is Role.PREDICT_TARGET:
            return ReasonerAnswer(q.role, target=self.target, source=self.name)
        scores = self.scores if self.scores is not None else [0.5] * len(q.markers)
        return ReasonerAnswer(q.role, scores=tuple(scores), source=self.name)


class BrokenReasoner(Reasoner):
    name = "broken"

    def answer(self, q: ReasonerQuery) -> ReasonerAnswer:
        raise RuntimeError("connection reset")
