""" Local policy: planning toward the moving location, discrete control and the episode loop. """

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional, Tuple, Union

import numpy as np
from PIL import Image  # type: ignore
from scipy import ndimage  # type: ignore

from topv.avpg import PromptMap, build_prompt_map
from topv.config import NavConfig, PolicyConfig, WorldConfig
from topv.dms import apply_dms
from topv.io_utils import write_json
from topv.ptd import (
    MarkerScores,
    NoFreeCellsError,
    TargetEstimate,
    ValueMap,
    exclusion_mask,
    fuse,
    select_moving_location,
    select_moving_location_max,
)
from topv.reasoner import Reasoner, ReasonerAnswer, ReasonerQuery, Role, query
from topv.search import astar, bounding_box
from topv.topmap import (
    CellState,
    DetectedObject,
    OccupancyGrid,
    detect_frontiers,
    integrate,
    shortest_to_target,
)
from topv.worldsim import (
    Action,
    Cell,
    Observation,
    Point,
    Pose,
    Scene,
    dump_scene,
    first_blocked,
    is_success,
    observe,
    render_scene,
    step,
    wrap_angle,
)


class Mode(Enum):
    EXPLORE = "explore"
    APPROACH = "approach"


@dataclass
class Plan:
    waypoints: List[Cell]
    goal: Point
    mode: Mode = Mode.EXPLORE
    origin: Point = (0.0, 0.0)
    meters_per_cell: float = 0.05

    def __len__(self) -> int:
        return len(self.waypoints)

    def position(self, index: int = 0) -> Point:
        row, col = self.waypoints[index]
        return (
            self.origin[0] + (col + 0.5) * self.meters_per_cell,
            self.origin[1] + (row + 0.5) * self.meters_per_cell,
        )

    def finished(self, pose: Pose, radius: float) -> bool:
        """ Empty, or only the final waypoint is left and it is within radius. """
        if not self.waypoints:
            return True
        if len(self.waypoints) > 1:
            return False
        x, y = self.position(-1)
        return math.hypot(x - pose.x, y - pose.y) <= radius


@dataclass(frozen=True)
class Episode:
    index: int
    scene_id: str
    target: str
    seed: int
    start: Optional[Pose] = None

    def to_dict(self) -> Dict[str, Any]:
        start = None if self.start is None else [self.start.x, self.start.y, self.start.heading]
        return {
            "index": self.index,
            "scene_id": self.scene_id,
            "target": self.target,
            "seed": self.seed,
            "start": start,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "Episode":
        start = doc.get("start")
        return cls(
            index=int(doc["index"]),
            scene_id=str(doc["scene_id"]),
            target=str(doc["target"]),
            seed=int(doc["seed"]),
            start=None if start is None else Pose(*start),
        )


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    path_length: float
    shortest_length: Optional[float]
    target: str
    seed: int
    index: int = 0
    scene_id: str = ""
    stop_reason: str = "limit"
    decisions: int = 0
    collisions: int = 0
    error: Optional[str] = None

    def __post_init__(self) -> None:
        assert self.path_length >= 0, f"Negative path length {self.path_length}"
        assert self.steps >= 0

    def to_dict(self) -> Dict[str, Any]:
        row = asdict(self)
        row["path_length"] = round(self.path_length, 6)
        if self.shortest_length is not None:
            row["shortest_length"] = round(self.shortest_length, 6)
        return row


def _traversable(
    grid: OccupancyGrid, box: Tuple[int, int, int, int], start: Cell, clearance: float
) -> np.ndarray:
    r0, r1, c0, c1 = box
    cells = grid.cells[r0:r1, c0:c1]
    free = cells == CellState.FREE
    # The agent always stands somewhere it can leave from.
    free[start[0] - r0, start[1] - c0] = True
    if clearance <= 0:
        return free
    room = ndimage.distance_transform_edt(cells != CellState.OBSTACLE) * grid.meters_per_cell
    inflated = free & (room > clearance)
    if not inflated[start[0] - r0, start[1] - c0]:
        logging.debug(f"Start {start} is within {clearance} m of an obstacle, planning without it")
        return free
    return inflated


def _component(traversable: np.ndarray, cell: Cell) -> np.ndarray:
    """Cells reachable from cell. Without corner cutting, 8-connected moves reach exactly the
    4-connected component.
    """
    labels, _ = ndimage.label(traversable)
    return labels == labels[cell]


def _contains(mask: np.ndarray, cell: Cell) -> bool:
    rows, cols = mask.shape
    return 0 <= cell[0] < rows and 0 <= cell[1] < cols and bool(mask[cell])


def plan_path(
    grid: OccupancyGrid,
    start: Point,
    goal: Point,
    clearance: float = 0.0,
    mode: Mode = Mode.EXPLORE,
) -> Plan:
    """Optimal 8-connected path over known-Free cells; Unknown cells are walls.

    An unreachable goal is replaced by the reachable cell nearest to it, first in row-major
    order on ties. If nothing but the start cell is reachable the plan is empty. With clearance,
    cells that close to an Obstacle are avoided unless that cuts off a goal that is reachable
    without it.
    """
    start_cell = grid.world_to_cell(*start)
    goal_cell = grid.world_to_cell(*grid.clamp_point(*goal))
    assert grid.in_bounds(*start_cell), f"Start {start} is off the map"

    box = bounding_box(grid.cells != CellState.UNKNOWN)
    assert box is not None, "Cannot plan on an empty map"
    r0, r1, c0, c1 = box
    r0, r1 = min(r0, start_cell[0]), max(r1, start_cell[0] + 1)
    c0, c1 = min(c0, start_cell[1]), max(c1, start_cell[1] + 1)
    box = (r0, r1, c0, c1)

    local_start = (start_cell[0] - r0, start_cell[1] - c0)
    local_goal = (goal_cell[0] - r0, goal_cell[1] - c0)

    traversable = _traversable(grid, box, start_cell, clearance)
    reachable = _component(traversable, local_start)
    if clearance > 0 and not _contains(reachable, local_goal):
        plain = _traversable(grid, box, start_cell, 0.0)
        plain_reachable = _component(plain, local_start)
        if _contains(plain_reachable, local_goal):
            traversable, reachable = plain, plain_reachable

    if not _contains(reachable, local_goal):
        rows, cols = np.nonzero(reachable)
        if rows.size <= 1:
            logging.debug(f"Nothing reachable from {start_cell}, empty plan")
            return Plan([], goal, mode, grid.origin, grid.meters_per_cell)
        nearest = int(np.argmin(np.hypot(rows - local_goal[0], cols - local_goal[1])))
        local_goal = (int(rows[nearest]), int(cols[nearest]))

    result = astar(traversable, local_start, local_goal)
    assert result.path is not None, f"{local_goal} is in the start's component"
    waypoints = [(row + r0, col + c0) for row, col in result.path]
    return Plan(waypoints, goal, mode, grid.origin, grid.meters_per_cell)


def _turn_toward(bearing_error: float) -> Action:
    # wrap_angle maps exactly-behind to -pi; that tie turns left.
    if bearing_error > 0 or bearing_error <= -math.pi + 1e-9:
        return Action.TURN_LEFT
    return Action.TURN_RIGHT


def face(pose: Pose, point: Point, config: PolicyConfig = PolicyConfig()) -> Optional[Action]:
    """ The turn that reduces the bearing error to point, or None when already aligned. """
    bearing = math.atan2(point[1] - pose.y, point[0] - pose.x)
    error = wrap_angle(bearing - pose.heading)
    if abs(error) <= math.radians(config.heading_tolerance_degrees) + 1e-9:
        return None
    return _turn_toward(error)


def next_action(plan: Plan, pose: Pose, config: PolicyConfig = PolicyConfig()) -> Action:
    """Pops waypoints within reach, then drives at the next one.

    The final waypoint is never popped. Once it is within reach the plan is finished and the
    agent turns left in place until the caller replans.
    """
    assert len(plan) > 0, "next_action needs a non-empty plan"
    while len(plan.waypoints) > 1:
        x, y = plan.position(0)
        if math.hypot(x - pose.x, y - pose.y) > config.waypoint_radius:
            break
        plan.waypoints.pop(0)
    if plan.finished(pose, config.waypoint_radius):
        return Action.TURN_LEFT
    turn = face(pose, plan.position(0), config)
    return Action.MOVE_FORWARD if turn is None else turn


class Transcript(Reasoner):
    """ Records every raw answer, or the error instead of one, of the wrapped reasoner. """

    def __init__(self, inner: Reasoner) -> None:
        self.inner = inner
        self.name = inner.name
        self.entries: List[Dict[str, Any]] = []

    def answer(self, q: ReasonerQuery) -> ReasonerAnswer:
        try:
            answer = self.inner.answer(q)
        except Exception as e:
            self.entries.append({"role": q.role.value, "error": repr(e)})
            raise
        self.entries.append(answer.to_dict())
        return answer

    def drain(self) -> List[Dict[str, Any]]:
        entries, self.entries = self.entries, []
        return entries


@dataclass
class Decision:
    moving_location: Optional[Point]
    prompt_map: PromptMap
    value_map: Optional[ValueMap] = None
    target: Optional[TargetEstimate] = None
    scores: Tuple[float, ...] = ()
    transcript: List[Dict[str, Any]] = field(default_factory=list)


def choose_moving_location(
    grid: OccupancyGrid,
    pose: Pose,
    target: str,
    reasoner: Reasoner,
    config: NavConfig = NavConfig(),
    visited: Tuple[Point, ...] = (),
) -> Decision:
    """ One high-level decision: prompt map, optional zoom, target prediction, fusion, argmax. """
    frontiers = detect_frontiers(grid, config.grid.min_frontier_size)
    prompt_map = build_prompt_map(grid, frontiers, pose, config.cluster, config.render)
    if config.use_dms:
        prompt_map = apply_dms(grid, prompt_map, reasoner, target, config.render)

    estimate = None
    if config.use_ptd:
        answer = query(reasoner, ReasonerQuery(Role.PREDICT_TARGET, prompt_map, target))
        assert answer.target is not None
        estimate = TargetEstimate.clamped(answer.target, grid)

    markers = prompt_map.markers
    scores = MarkerScores(())
    if markers:
        answer = query(reasoner, ReasonerQuery(Role.SCORE_MARKERS, prompt_map, target))
        assert answer.scores is not None
        scores = MarkerScores(answer.scores)

    decision = Decision(None, prompt_map, target=estimate, scores=scores.scores)
    if not markers and estimate is None:
        if frontiers:
            decision.moving_location = max(frontiers, key=lambda f: f.size).midpoint
        logging.debug(f"No markers to score, falling back to {decision.moving_location}")
        return decision

    exclude = None
    if visited:
        exclude = exclusion_mask(grid, list(visited), config.policy.revisit_radius)
    try:
        if config.fusion_mode == "gaussian":
            decision.value_map = fuse(markers, scores, estimate, grid, config.ptd)
            decision.moving_location = select_moving_location(decision.value_map, grid, exclude)
        else:
            decision.moving_location = select_moving_location_max(
                markers, scores, estimate, grid, config.ptd, exclude
            )
    except (NoFreeCellsError, ValueError) as e:
        logging.warning(f"Moving-location selection failed: {e}")
    return decision


def _visible_target(obs: Observation, pose: Pose, target: str, world: WorldConfig) -> bool:
    return any(
        category == target
        and math.hypot(position[0] - pose.x, position[1] - pose.y) <= world.success_distance
        for category, position in obs.visible_objects
    )


def _nearest(objects: List[DetectedObject], pose: Pose) -> DetectedObject:
    return min(
        objects, key=lambda o: math.hypot(o.position[0] - pose.x, o.position[1] - pose.y)
    )


class EpisodeDump:
    """ Per-decision debug files under one directory, named by step so reruns overwrite. """

    def __init__(self, root: Union[str, Path]) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def decision(self, steps: int, decision: Decision) -> None:
        stem = self.root / f"step_{steps:04d}"
        decision.prompt_map.save(stem.with_name(stem.name + "_prompt"))
        if decision.value_map is not None:
            decision.value_map.save(stem.with_name(stem.name + "_value"))
        write_json(
            stem.with_name(stem.name + "_decision.json"),
            {
                "step": steps,
                "moving_location": decision.moving_location,
                "target_estimate": None
                if decision.target is None
                else list(decision.target.position),
                "marker_scores": list(decision.scores),
                "transcript": decision.transcript,
            },
        )

    def finish(
        self,
        scene: Scene,
        episode: Episode,
        grid: OccupancyGrid,
        poses: List[Pose],
        result: EpisodeResult,
    ) -> None:
        (self.root / "scene.json").write_text(dump_scene(scene) + "\n")
        grid.save_snapshot(self.root / "grid")
        Image.fromarray(np.flipud(render_scene(scene, poses))).save(self.root / "trajectory.png")
        write_json(self.root / "episode.json", episode.to_dict())
        write_json(
            self.root / "trajectory.json",
            [[round(p.x, 6), round(p.y, 6), round(p.heading, 6)] for p in poses],
        )
        write_json(self.root / "result.json", result.to_dict())


def run_episode(
    scene: Scene,
    episode: Episode,
    reasoner: Reasoner,
    config: NavConfig = NavConfig(),
    dump_dir: Union[str, Path, None] = None,
) -> EpisodeResult:
    """Runs one episode to a stop or the step limit.

    Every decision round is observe, map, prompt, optional zoom, target prediction, marker
    scoring and selection of a moving location; the agent then follows a plan toward it until
    it arrives, collides, the plan runs dry or replan_every actions pass. Once the target has
    been detected the agent plans straight to it instead and stops when it sees it within the
    success distance.
    """
    world = replace(config.world, meters_per_cell=scene.meters_per_cell)
    policy = config.policy
    dump = EpisodeDump(dump_dir) if dump_dir is not None else None
    if dump is not None:
        reasoner = Transcript(reasoner)

    pose = episode.start if episode.start is not None else scene.start
    poses = [pose]
    grid = OccupancyGrid.centered_on(pose, config.grid, scene.meters_per_cell)
    obs = observe(scene, pose, world)
    integrate(grid, obs, pose, config.grid.dedup_radius)

    n_turns = int(round(360.0 / world.turn_degrees))
    spin: Deque[Action] = deque([Action.TURN_LEFT] * n_turns if policy.initial_spin else [])
    plan: Optional[Plan] = None
    visited: List[Point] = []
    rejected: List[Point] = []
    since_plan = 0
    collided = False
    steps = 0
    path_length = 0.0
    decisions = 0
    collisions = 0
    stop_reason = "limit"

    while steps < policy.step_limit:
        detected = [o for o in grid.objects_of(episode.target) if o.position not in rejected]

        action: Optional[Action] = None
        if _visible_target(obs, pose, episode.target, world):
            action = Action.STOP
        elif spin:
            action = spin.popleft()
        elif detected:
            goal = _nearest(detected, pose).position
            stale = (
                plan is None
                or plan.mode is not Mode.APPROACH
                or plan.goal != goal
                or collided
                or since_plan >= policy.replan_every
            )
            if not stale and plan is not None and plan.finished(pose, policy.waypoint_radius):
                # Arrived short of it; the map may have opened up since planning.
                stale = since_plan > 0 and math.hypot(
                    goal[0] - pose.x, goal[1] - pose.y
                ) > world.success_distance
            if stale:
                plan = plan_path(grid, pose.position, goal, policy.clearance, Mode.APPROACH)
                since_plan = 0
                logging.debug(f"Approaching {episode.target} at {goal} with {len(plan)} waypoints")
            assert plan is not None
            if plan.finished(pose, policy.waypoint_radius):
                action = face(pose, goal, policy)
                if action is None:
                    logging.info(f"Cannot confirm {episode.target} at {goal}, resuming search")
                    rejected.append(goal)
                    plan = None
                    action = Action.TURN_LEFT
        else:
            if (
                plan is None
                or plan.mode is Mode.APPROACH
                or plan.finished(pose, policy.waypoint_radius)
                or since_plan >= policy.replan_every
                or collided
            ):
                if plan is not None and plan.finished(pose, policy.waypoint_radius):
                    visited.append(plan.goal)
                decision = choose_moving_location(
                    grid, pose, episode.target, reasoner, config, tuple(visited)
                )
                decisions += 1
                if dump is not None:
                    assert isinstance(reasoner, Transcript)
                    decision.transcript = reasoner.drain()
                    dump.decision(steps, decision)
                since_plan = 0
                if decision.moving_location is None:
                    plan = None
                else:
                    plan = plan_path(
                        grid, pose.position, decision.moving_location, policy.clearance
                    )
                    logging.debug(
                        f"Step {steps}: moving to {decision.moving_location}, "
                        f"{len(plan)} waypoints"
                    )
                    if len(plan) == 0:
                        visited.append(plan.goal)
            if plan is None or len(plan) == 0:
                action = Action.TURN_LEFT

        if action is None:
            assert plan is not None
            action = next_action(plan, pose, policy)

        steps += 1
        since_plan += 1
        if action is Action.STOP:
            stop_reason = "stop"
            break

        new_pose = step(scene, pose, action, world)
        collided = action is Action.MOVE_FORWARD and new_pose == pose
        if collided:
            collisions += 1
            hit = first_blocked(scene, pose, world.forward_step)
            if hit is not None:
                bump = grid.world_to_cell(*scene.cell_center(*hit))
            else:
                bump = grid.world_to_cell(
                    pose.x + world.forward_step * math.cos(pose.heading),
                    pose.y + world.forward_step * math.sin(pose.heading),
                )
            if grid.in_bounds(*bump):
                grid.cells[bump] = CellState.OBSTACLE
        path_length += math.hypot(new_pose.x - pose.x, new_pose.y - pose.y)
        pose = new_pose
        poses.append(pose)
        obs = observe(scene, pose, world)
        integrate(grid, obs, pose, config.grid.dedup_radius)

    success = is_success(scene, pose, episode.target, world)
    result = EpisodeResult(
        success=success,
        steps=steps,
        path_length=path_length,
        shortest_length=shortest_to_target(
            scene, poses[0].position, episode.target, world.success_distance
        ),
        target=episode.target,
        seed=episode.seed,
        index=episode.index,
        scene_id=episode.scene_id,
        stop_reason=stop_reason,
        decisions=decisions,
        collisions=collisions,
    )
    logging.info(
        f"Episode {episode.index} ({episode.scene_id}, {episode.target}): success={success} "
        f"steps={steps} p={path_length:.2f} l={result.shortest_length} ({stop_reason})"
    )
    if dump is not None:
        dump.finish(scene, episode, grid, poses, result)
    return result
