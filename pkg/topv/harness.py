""" Benchmark orchestration: episode suites, SR/SPL, reports and parameter sweeps. """

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd  # type: ignore
from joblib import Parallel, delayed  # type: ignore

from topv.config import NavConfig, config_to_dict, fingerprint, override
from topv.io_utils import write_json
from topv.policy import Episode, EpisodeResult, run_episode
from topv.reasoner import make_reasoner
from topv.scenegen import SceneSpec, generate_scene, sample_episode_targets
from topv.topmap import shortest_to_target
from topv.worldsim import Pose, Scene, dump_scene, load_scene

REPORT_COLUMNS = [
    "index",
    "scene_id",
    "target",
    "seed",
    "success",
    "steps",
    "path_length",
    "shortest_length",
    "stop_reason",
    "decisions",
    "collisions",
    "error",
]


def assert_report(sr: float, spl: float) -> None:
    if not 0.0 <= spl <= sr + 1e-9 <= 100.0 + 1e-9:
        logging.error(f"sr={sr}, spl={spl}")
    assert 0.0 <= spl <= sr + 1e-9 <= 100.0 + 1e-9


def compute_sr(results: Sequence[EpisodeResult]) -> float:
    if len(results) == 0:
        raise ValueError("Cannot compute SR of no episodes")
    return 100.0 * sum(r.success for r in results) / len(results)


def spl_term(result: EpisodeResult) -> float:
    """ S * l / max(p, l); zero for failures, one for a success that needed no movement. """
    if not result.success or result.shortest_length is None:
        return 0.0
    longest = max(result.path_length, result.shortest_length)
    if longest == 0.0:
        return 1.0
    return result.shortest_length / longest


def compute_spl(results: Sequence[EpisodeResult]) -> float:
    if len(results) == 0:
        raise ValueError("Cannot compute SPL of no episodes")
    return 100.0 * sum(spl_term(r) for r in results) / len(results)


@dataclass
class Suite:
    scenes: Dict[str, Scene]
    episodes: List[Episode]

    def __post_init__(self) -> None:
        for episode in self.episodes:
            if episode.scene_id not in self.scenes:
                raise ValueError(f"Episode {episode.index} uses unknown scene {episode.scene_id}")

    def save(self, outdir: Union[str, Path]) -> None:
        outdir = Path(outdir)
        (outdir / "scenes").mkdir(parents=True, exist_ok=True)
        for scene_id, scene in self.scenes.items():
            (outdir / "scenes" / f"{scene_id}.json").write_text(dump_scene(scene) + "\n")
        write_json(outdir / "episodes.json", [e.to_dict() for e in self.episodes])
        logging.info(f"Wrote {len(self.scenes)} scenes and {len(self.episodes)} episodes")

    @classmethod
    def load(cls, indir: Union[str, Path], meters_per_cell: float = 0.05) -> "Suite":
        indir = Path(indir)
        scenes = {
            path.stem: load_scene(path.read_text(), meters_per_cell)
            for path in sorted((indir / "scenes").glob("*.json"))
        }
        episodes = [
            Episode.from_dict(doc) for doc in json.loads((indir / "episodes.json").read_text())
        ]
        return cls(scenes, episodes)


def make_suite(
    scene_seeds: Sequence[int],
    n_episodes: int,
    seed: int = 0,
    spec: SceneSpec = SceneSpec(),
    meters_per_cell: float = 0.05,
) -> Suite:
    """Generates one scene per seed and deals episodes to them round-robin.

    Each episode gets a target present in its scene and a start heading in whole turns.
    """
    if len(scene_seeds) == 0 or n_episodes <= 0:
        raise ValueError("A suite needs at least one scene and one episode")
    scenes = {
        f"scene_{s:03d}": generate_scene(s, spec, meters_per_cell) for s in scene_seeds
    }
    scene_ids = list(scenes)
    rng = np.random.default_rng(seed)
    n_scenes = len(scene_ids)
    per_scene = [n_episodes // n_scenes + (i < n_episodes % n_scenes) for i in range(n_scenes)]
    targets = {
        scene_id: sample_episode_targets(scenes[scene_id], count, rng)
        for scene_id, count in zip(scene_ids, per_scene)
    }

    episodes = []
    for index in range(n_episodes):
        scene_id = scene_ids[index % n_scenes]
        scene = scenes[scene_id]
        heading = math.radians(30.0 * int(rng.integers(12)))
        episodes.append(
            Episode(
                index=index,
                scene_id=scene_id,
                target=targets[scene_id][index // n_scenes],
                seed=seed * 100_003 + index,
                start=Pose(scene.start.x, scene.start.y, heading),
            )
        )
    return Suite(scenes, episodes)


@dataclass
class BenchmarkReport:
    sr: float
    spl: float
    rows: List[EpisodeResult]
    fingerprint: str
    config: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        assert_report(self.sr, self.spl)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sr": round(self.sr, 6),
            "spl": round(self.spl, 6),
            "n_episodes": len(self.rows),
            "fingerprint": self.fingerprint,
            "config": self.config,
            "episodes": [row.to_dict() for row in self.rows],
        }

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.to_dict() for row in self.rows], columns=REPORT_COLUMNS)

    def table(self) -> str:
        summary = (
            f"SR  {self.sr:6.2f}\n"
            f"SPL {self.spl:6.2f}\n"
            f"episodes {len(self.rows)}, config {self.fingerprint[:12]}\n\n"
        )
        return summary + self.frame().to_string(index=False, float_format="%.3f") + "\n"

    def write(self, outdir: Union[str, Path]) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_json(outdir / "report.json", self.to_dict())
        (outdir / "report.txt").write_text(self.table())


def run_one(
    scene: Scene,
    episode: Episode,
    config: NavConfig,
    dump_root: Optional[Path] = None,
) -> EpisodeResult:
    """ One episode that cannot raise: failures are logged and count as unsuccessful. """
    try:
        reasoner = make_reasoner(config.reasoner, scene, episode.seed, config.world)
        dump_dir = None if dump_root is None else dump_root / f"episode_{episode.index:04d}"
        return run_episode(scene, episode, reasoner, config, dump_dir)
    except Exception as e:
        logging.exception(f"Episode {episode.index} on {episode.scene_id} failed")
        start = episode.start if episode.start is not None else scene.start
        try:
            shortest = shortest_to_target(
                scene, start.position, episode.target, config.world.success_distance
            )
        except Exception:
            shortest = None
        return EpisodeResult(
            success=False,
            steps=0,
            path_length=0.0,
            shortest_length=shortest,
            target=episode.target,
            seed=episode.seed,
            index=episode.index,
            scene_id=episode.scene_id,
            stop_reason="error",
            error=repr(e),
        )


def run_benchmark(
    suite: Suite,
    config: NavConfig = NavConfig(),
    n_jobs: int = 1,
    dump_root: Union[str, Path, None] = None,
) -> BenchmarkReport:
    """ Runs every episode, in parallel when n_jobs > 1, and aggregates in episode order. """
    if len(suite.episodes) == 0:
        raise ValueError("Cannot benchmark an empty suite")
    dump_path = None if dump_root is None else Path(dump_root)
    logging.info(f"Running {len(suite.episodes)} episodes with {n_jobs} jobs")
    results = Parallel(n_jobs=n_jobs)(
        delayed(run_one)(suite.scenes[episode.scene_id], episode, config, dump_path)
        for episode in suite.episodes
    )
    results = sorted(results, key=lambda r: r.index)
    report = BenchmarkReport(
        sr=compute_sr(results),
        spl=compute_spl(results),
        rows=results,
        fingerprint=fingerprint(config),
        config=config_to_dict(config),
    )
    logging.info(f"SR={report.sr:.2f} SPL={report.spl:.2f}")
    return report


def sweep(
    suite: Suite,
    config: NavConfig,
    betas: Sequence[float],
    fusions: Sequence[str] = ("gaussian", "max"),
    n_jobs: int = 1,
    outdir: Union[str, Path, None] = None,
) -> pd.DataFrame:
    """ One benchmark per (fusion, beta); each report is written under outdir when given. """
    rows = []
    for fusion in fusions:
        for beta in betas:
            variant = replace(override(config, "ptd", beta=beta), fusion_mode=fusion)
            report = run_benchmark(suite, variant, n_jobs)
            if outdir is not None:
                report.write(Path(outdir) / f"{fusion}_beta{beta:g}")
            rows.append(
                {
                    "fusion": fusion,
                    "beta": beta,
                    "sr": report.sr,
                    "spl": report.spl,
                    "fingerprint": report.fingerprint,
                }
            )
    return pd.DataFrame(rows, columns=["fusion", "beta", "sr", "spl", "fingerprint"])
