""" Reasoners decide where to zoom, where the target is and how promising each marker is. """

from __future__ import annotations

import base64
import json
import logging
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import requests
from scipy import ndimage  # type: ignore
from tenacity import (  # type: ignore
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    stop_after_delay,
    wait_exponential,
)

from topv.avpg import KeyAreaMarker, PromptMap, iou
from topv.config import ReasonerConfig, WorldConfig
from topv.scenegen import co_occurrence
from topv.search import distance_field
from topv.topmap import success_field
from topv.worldsim import PlacedObject, Point, Scene

PROMPT_DIR = Path(__file__).parent / "prompts"

NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)"
COORDINATE_PATTERN = re.compile(rf"\(\s*({NUMBER})\s*,\s*({NUMBER})\s*\)")
SCORE_PATTERN = re.compile(rf"\bm(\d+)\s*[:=]\s*({NUMBER})")


class Role(Enum):
    SELECT_REGION = "select_region"
    PREDICT_TARGET = "predict_target"
    SCORE_MARKERS = "score_markers"


@dataclass(frozen=True, eq=False)
class ReasonerQuery:
    role: Role
    prompt_map: PromptMap
    target_category: str

    @property
    def markers(self) -> Tuple[KeyAreaMarker, ...]:
        return self.prompt_map.markers

    @property
    def marker_ids(self) -> List[int]:
        return [m.id for m in self.markers]


@dataclass(frozen=True)
class ReasonerAnswer:
    role: Role
    region: Optional[Point] = None
    target: Optional[Point] = None
    scores: Optional[Tuple[float, ...]] = None
    source: str = ""
    raw_text: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "role": self.role.value,
            "region": list(self.region) if self.region is not None else None,
            "target": list(self.target) if self.target is not None else None,
            "scores": list(self.scores) if self.scores is not None else None,
            "source": self.source,
            "raw_text": self.raw_text,
        }


def parse_coordinates(text: str) -> Optional[Point]:
    """ First "(a, b)" decimal pair in free text, in the map's meter frame. """
    match = COORDINATE_PATTERN.search(text or "")
    if match is None:
        return None
    return (float(match.group(1)), float(match.group(2)))


def parse_scores(text: str, marker_ids: Sequence[int]) -> Optional[Tuple[float, ...]]:
    """"m<k>: v" pairs for known markers, clamped to [0, 1]; missing markers get 0.5.

    Returns None when the text names none of the markers.
    """
    found: Dict[int, float] = {}
    for match in SCORE_PATTERN.finditer(text or ""):
        marker, value = int(match.group(1)), float(match.group(2))
        if marker in marker_ids and marker not in found:
            found[marker] = min(1.0, max(0.0, value))
    if not found:
        return None
    return tuple(found.get(marker, 0.5) for marker in marker_ids)


def check_answer(answer: ReasonerAnswer, q: ReasonerQuery) -> None:
    if answer.role is not q.role:
        raise ValueError(f"Asked for {q.role.value}, got {answer.role.value}")
    if q.role is Role.SELECT_REGION and answer.region is not None:
        if not all(math.isfinite(v) for v in answer.region):
            raise ValueError(f"Non-finite region {answer.region}")
    elif q.role is Role.PREDICT_TARGET:
        if answer.target is None or not all(math.isfinite(v) for v in answer.target):
            raise ValueError(f"Bad target {answer.target}")
    elif q.role is Role.SCORE_MARKERS:
        if answer.scores is None or len(answer.scores) != len(q.markers):
            raise ValueError(f"{answer.scores} does not score {len(q.markers)} markers")
        if not all(0.0 <= s <= 1.0 for s in answer.scores):
            raise ValueError(f"Scores {answer.scores} outside [0, 1]")


class Reasoner(ABC):
    name = "reasoner"

    @abstractmethod
    def answer(self, q: ReasonerQuery) -> ReasonerAnswer:
        """ May raise; callers go through query(), which never does. """


class HeuristicReasoner(Reasoner):
    """Offline commonsense stand-in.

    Zooms only where labels collide, predicts the target at the largest frontier and scores
    markers by how often their objects share a room with the target.
    """

    name = "heuristic"

    def answer(self, q: ReasonerQuery) -> ReasonerAnswer:
        pm = q.prompt_map
        if q.role is Role.SELECT_REGION:
            return ReasonerAnswer(q.role, region=self.select_region(pm), source=self.name)
        elif q.role is Role.PREDICT_TARGET:
            return ReasonerAnswer(
                q.role, target=self.predict_target(pm, q.target_category), source=self.name
            )
        return ReasonerAnswer(
            q.role, scores=self.score_markers(pm, q.target_category), source=self.name
        )

    @staticmethod
    def select_region(pm: PromptMap) -> Optional[Point]:
        best, pair = 0.0, None
        boxes = pm.textboxes
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                overlap = iou(boxes[i].rect, boxes[j].rect)
                if overlap > best:
                    best, pair = overlap, (boxes[i], boxes[j])
        if pair is None:
            return None
        a, b = pair
        return ((a.position[0] + b.position[0]) / 2, (a.position[1] + b.position[1]) / 2)

    @staticmethod
    def predict_target(pm: PromptMap, target: str) -> Point:
        seen = [obj.position for obj in pm.objects if obj.category == target]
        if seen:
            return min(seen, key=lambda p: math.hypot(p[0] - pm.pose.x, p[1] - pm.pose.y))
        if pm.frontiers:
            largest = max(pm.frontiers, key=lambda f: f.size)
            return largest.midpoint
        return pm.pose.position

    @staticmethod
    def score_markers(pm: PromptMap, target: str) -> Tuple[float, ...]:
        scores = []
        for marker in pm.markers:
            categories = [
                obj.category
                for obj in pm.objects
                if np.any(np.all(np.isclose(marker.members, obj.position, atol=1e-9), axis=1))
            ]
            if categories:
                scores.append(max(co_occurrence(target, c) for c in categories))
            else:
                scores.append(0.5)
        return tuple(scores)


HEURISTIC = HeuristicReasoner()


class ScriptedReasoner(Reasoner):
    """Omniscient oracle reading the scene's ground truth, for upper bounds in tests.

    Never zooms, points at the target instance nearest along the floor and rates markers by
    their floor distance to the target, the closest scoring 1.
    """

    name = "scripted"

    def __init__(self, scene: Scene, config: WorldConfig = WorldConfig()) -> None:
        self.scene = scene
        self.config = config
        self._goal_fields: Dict[str, np.ndarray] = {}
        # Blocked cells borrow their nearest navigable cell.
        _, self._nearest = ndimage.distance_transform_edt(scene.blocked, return_indices=True)

    def snap(self, point: Point) -> Optional[Tuple[int, int]]:
        rows, cols = self.scene.shape
        row, col = self.scene.world_to_cell(*point)
        if not (0 <= row < rows and 0 <= col < cols):
            return None
        return int(self._nearest[0][row, col]), int(self._nearest[1][row, col])

    def goal_field(self, target: str) -> np.ndarray:
        """ Geodesic meters to the nearest cell within success distance of any instance. """
        if target not in self._goal_fields:
            self._goal_fields[target] = success_field(
                self.scene, target, self.config.success_distance
            )
        return self._goal_fields[target]

    def distance_from(self, point: Point, target: str) -> float:
        cell = self.snap(point)
        return math.inf if cell is None else float(self.goal_field(target)[cell])

    def answer(self, q: ReasonerQuery) -> ReasonerAnswer:
        if q.role is Role.SELECT_REGION:
            return ReasonerAnswer(q.role, region=None, source=self.name)
        elif q.role is Role.PREDICT_TARGET:
            instances = self.scene.instances(q.target_category)
            start = self.snap(q.prompt_map.pose.position)
            if not instances or start is None:
                return replace(HEURISTIC.answer(q), source=self.name)
            from_agent = distance_field(~self.scene.blocked, [start], self.scene.meters_per_cell)

            def floor_distance(obj: PlacedObject) -> float:
                cell = self.snap(obj.position)
                return math.inf if cell is None else float(from_agent[cell])

            nearest = min(instances, key=floor_distance)
            return ReasonerAnswer(q.role, target=nearest.position, source=self.name)

        distances = [self.distance_from(m.centroid, q.target_category) for m in q.markers]
        finite = [d for d in distances if math.isfinite(d)]
        if not finite:
            return ReasonerAnswer(q.role, scores=tuple(0.0 for _ in distances), source=self.name)
        best = min(finite)
        scores = tuple((1.0 + best) / (1.0 + d) if math.isfinite(d) else 0.0 for d in distances)
        return ReasonerAnswer(q.role, scores=scores, source=self.name)


class RandomReasoner(Reasoner):
    """ Uniformly random but well-formed answers: the lower bound. """

    name = "random"

    def __init__(self, seed: int = 0) -> None:
        self.rng = np.random.default_rng(seed)

    def answer(self, q: ReasonerQuery) -> ReasonerAnswer:
        xmin, ymin, xmax, ymax = q.prompt_map.crop_window
        point = (float(self.rng.uniform(xmin, xmax)), float(self.rng.uniform(ymin, ymax)))
        if q.role is Role.SELECT_REGION:
            region = point if self.rng.random() < 0.5 else None
            return ReasonerAnswer(q.role, region=region, source=self.name)
        elif q.role is Role.PREDICT_TARGET:
            return ReasonerAnswer(q.role, target=point, source=self.name)
        scores = tuple(float(s) for s in self.rng.uniform(0.0, 1.0, size=len(q.markers)))
        return ReasonerAnswer(q.role, scores=scores, source=self.name)


@lru_cache(maxsize=None)
def load_template(role: Role) -> str:
    return (PROMPT_DIR / f"{role.value}.txt").read_text()


def _format_points(items: Iterable[Tuple[str, Point]]) -> str:
    lines = [f"- {name}: ({p[0]:.1f}, {p[1]:.1f})" for name, p in items]
    return "\n".join(lines) if lines else "- none"


def render_prompt(q: ReasonerQuery, with_image: bool = True) -> str:
    pm = q.prompt_map
    xmin, ymin, xmax, ymax = pm.crop_window
    heading = math.degrees(pm.pose.heading)
    frontiers = pm.frontiers
    text = load_template(q.role).format(
        target=q.target_category,
        window=f"x from {xmin:.1f} to {xmax:.1f} m, y from {ymin:.1f} to {ymax:.1f} m",
        agent=f"({pm.pose.x:.1f}, {pm.pose.y:.1f}) facing {heading:.0f} degrees",
        markers=_format_points((m.label, m.centroid) for m in pm.markers),
        objects=_format_points((obj.category, obj.position) for obj in pm.objects),
        frontiers=_format_points((f"frontier of {f.size} cells", f.midpoint) for f in frontiers),
    )
    if not with_image:
        text = "No map image is attached; rely on the listed coordinates only.\n\n" + text
    return text


class RemoteReasoner(Reasoner):
    """Multimodal model behind an HTTP endpoint.

    Request: {role, text_prompt, image (base64 PNG, omitted in text-only mode), metadata}.
    Response: {text}. Transport errors are retried; unparseable text falls back to the heuristic.
    """

    name = "remote"

    def __init__(self, config: ReasonerConfig = ReasonerConfig()) -> None:
        endpoint = config.resolve_endpoint()
        if endpoint is None:
            raise ValueError("Remote reasoner needs --endpoint or TOPV_REASONER_URL")
        self.endpoint = endpoint
        self.config = config
        self.session = requests.Session()

    def payload(self, q: ReasonerQuery) -> Dict[str, Any]:
        body: Dict[str, Any] = {
            "role": q.role.value,
            "text_prompt": render_prompt(q, self.config.send_image),
            "metadata": q.prompt_map.metadata(),
        }
        if self.config.send_image:
            body["image"] = base64.b64encode(q.prompt_map.png_bytes()).decode("ascii")
        return body

    def post(self, body: Dict[str, Any]) -> str:
        timeout = self.config.deadline / (self.config.retries + 1)
        for attempt in Retrying(
            stop=stop_after_attempt(self.config.retries + 1)
            | stop_after_delay(self.config.deadline),
            wait=wait_exponential(multiplier=self.config.backoff, max=self.config.deadline),
            retry=retry_if_exception_type((requests.RequestException, ValueError)),
            reraise=True,
        ):
            with attempt:
                response = self.session.post(self.endpoint, json=body, timeout=timeout)
                response.raise_for_status()
                text = response.json().get("text")
                if not isinstance(text, str):
                    raise ValueError(f"Response has no text field: {response.text[:200]}")
                return text
        raise AssertionError("unreachable")

    def answer(self, q: ReasonerQuery) -> ReasonerAnswer:
        text = self.post(self.payload(q))
        logging.debug(f"{q.role.value} <- {text!r}")
        if q.role is Role.SELECT_REGION:
            region = parse_coordinates(text)
            return ReasonerAnswer(q.role, region=region, source=self.name, raw_text=text)
        elif q.role is Role.PREDICT_TARGET:
            target = parse_coordinates(text)
            if target is None:
                return replace(HEURISTIC.answer(q), source="fallback", raw_text=text)
            return ReasonerAnswer(q.role, target=target, source=self.name, raw_text=text)
        scores = parse_scores(text, q.marker_ids)
        if scores is None:
            return replace(HEURISTIC.answer(q), source="fallback", raw_text=text)
        return ReasonerAnswer(q.role, scores=scores, source=self.name, raw_text=text)


def query(reasoner: Reasoner, q: ReasonerQuery) -> ReasonerAnswer:
    """ Total: any failure or malformed answer becomes the heuristic's answer for that role. """
    try:
        answer = reasoner.answer(q)
        check_answer(answer, q)
        return answer
    except Exception as e:
        logging.warning(f"{reasoner.name} reasoner failed on {q.role.value} ({e}), falling back")
        return replace(HEURISTIC.answer(q), source="fallback")


def make_reasoner(
    config: ReasonerConfig,
    scene: Optional[Scene] = None,
    seed: int = 0,
    world: WorldConfig = WorldConfig(),
) -> Reasoner:
    if config.kind == "heuristic":
        return HEURISTIC
    elif config.kind == "scripted":
        if scene is None:
            raise ValueError("The scripted reasoner needs the scene")
        return ScriptedReasoner(scene, world)
    elif config.kind == "random":
        return RandomReasoner(seed)
    elif config.kind == "remote":
        return RemoteReasoner(config)
    raise ValueError(f"Unknown reasoner {config.kind}")
