""" Runs top-view navigation benchmarks, single episodes and suite generation from the command
line. """

import logging
from pathlib import Path
from typing import List, Literal, Optional

import argh  # type: ignore
import numpy as np
from argh import arg
from PIL import Image  # type: ignore

from topv.avpg import build_prompt_map
from topv.config import NavConfig, load_config, override
from topv.harness import Suite, make_suite, run_benchmark
from topv.harness import sweep as run_sweep
from topv.io_utils import write_json
from topv.policy import Episode, run_episode
from topv.reasoner import make_reasoner
from topv.scenegen import SceneSpec, generate_scene
from topv.topmap import OccupancyGrid, detect_frontiers
from topv.worldsim import Pose, load_scene, render_scene
from utils import make_outdir, parse_seeds, setup_logging

LAYERS = ["history", "obstacle", "textboxes", "coordinate"]


def make_config(
    config: Optional[Path] = None,
    no_dms: bool = False,
    no_ptd: bool = False,
    fusion: Optional[str] = None,
    render_ablation: Optional[str] = None,
    beta: Optional[float] = None,
    reasoner: Optional[str] = None,
    endpoint: Optional[str] = None,
    text_only: bool = False,
) -> NavConfig:
    """ Config file first, then flags on top. """
    nav = load_config(config)
    nav = override(nav, use_dms=False if no_dms else None, use_ptd=False if no_ptd else None)
    nav = override(nav, fusion_mode=fusion)
    nav = override(nav, "ptd", beta=beta)
    nav = override(
        nav, "reasoner", kind=reasoner, endpoint=endpoint, send_image=False if text_only else None
    )
    if render_ablation is not None:
        nav = override(nav, render=nav.render.without(render_ablation))
    return nav


def load_suite(
    suite: Optional[Path], scenes: str, episodes: int, seed: int, meters_per_cell: float
) -> Suite:
    if suite is not None:
        logging.info(f"Loading suite from {suite}")
        return Suite.load(suite, meters_per_cell)
    return make_suite(parse_seeds(scenes), episodes, seed, SceneSpec(), meters_per_cell)


@arg("--fusion", choices=["gaussian", "max"])
@arg("--render-ablation", choices=LAYERS)
@arg("--reasoner", choices=["heuristic", "scripted", "random", "remote"])
def run(
    config: Optional[Path] = None,
    suite: Optional[Path] = None,
    scenes: str = "0-9",
    episodes: int = 100,
    seed: int = 0,
    outdir: Path = Path("results"),
    no_dms: bool = False,
    no_ptd: bool = False,
    fusion: Optional[str] = None,
    render_ablation: Optional[str] = None,
    beta: Optional[float] = None,
    reasoner: Optional[str] = None,
    endpoint: Optional[str] = None,
    text_only: bool = False,
    dump: bool = False,
    n_cpus: int = 1,
    timestamp: bool = False,
    verbosity: Literal["INFO", "DEBUG"] = "INFO",
) -> None:
    """ Runs a benchmark suite and writes report.json and report.txt. """
    outdir = make_outdir(outdir, timestamp)
    setup_logging(verbosity, log_path=outdir / "log.txt")

    nav = make_config(
        config, no_dms, no_ptd, fusion, render_ablation, beta, reasoner, endpoint, text_only
    )
    episode_suite = load_suite(suite, scenes, episodes, seed, nav.world.meters_per_cell)
    report = run_benchmark(
        episode_suite, nav, n_jobs=n_cpus, dump_root=outdir / "dumps" if dump else None
    )
    report.write(outdir)
    print(report.table().split("\n\n")[0])


@arg("--reasoner", choices=["heuristic", "scripted", "random", "remote"])
def episode(
    target: str,
    scene: Optional[Path] = None,
    scene_seed: int = 0,
    seed: int = 0,
    config: Optional[Path] = None,
    reasoner: Optional[str] = None,
    endpoint: Optional[str] = None,
    no_dms: bool = False,
    no_ptd: bool = False,
    debug_dump: Optional[Path] = None,
    verbosity: Literal["INFO", "DEBUG"] = "INFO",
) -> None:
    """ Runs one episode, optionally dumping every decision under --debug-dump. """
    setup_logging(verbosity)
    nav = make_config(config, no_dms, no_ptd, reasoner=reasoner, endpoint=endpoint)
    res = nav.world.meters_per_cell
    if scene is not None:
        the_scene = load_scene(scene.read_text(), res)
        scene_id = scene.stem
    else:
        the_scene = generate_scene(scene_seed, SceneSpec(), res)
        scene_id = f"scene_{scene_seed:03d}"
    if the_scene.targets and target not in the_scene.targets:
        logging.warning(f"{target} is not among the scene's targets {the_scene.targets}")

    the_reasoner = make_reasoner(nav.reasoner, the_scene, seed, nav.world)
    result = run_episode(
        the_scene, Episode(0, scene_id, target, seed), the_reasoner, nav, debug_dump
    )
    print(result.to_dict())


def genscenes(
    outdir: Path = Path("suite"),
    scenes: str = "0-9",
    episodes: int = 100,
    seed: int = 0,
    n_rooms: int = 4,
    room_size: float = 4.0,
    objects_per_room: int = 3,
    extra_doors: int = 0,
    meters_per_cell: float = 0.05,
    preview: bool = False,
    verbosity: Literal["INFO", "DEBUG"] = "INFO",
) -> None:
    """ Generates a suite of scenes and episodes on disk for later `run --suite`. """
    outdir = make_outdir(outdir)
    setup_logging(verbosity, log_path=outdir / "log.txt")
    spec = SceneSpec(
        n_rooms=n_rooms,
        room_size=(room_size, room_size),
        objects_per_room=objects_per_room,
        extra_doors=extra_doors,
    )
    suite = make_suite(parse_seeds(scenes), episodes, seed, spec, meters_per_cell)
    suite.save(outdir)
    if preview:
        for scene_id, the_scene in suite.scenes.items():
            Image.fromarray(np.flipud(render_scene(the_scene))).save(
                outdir / "scenes" / f"{scene_id}.png"
            )


def render(
    snapshot: Path,
    out: Path = Path("prompt_map"),
    config: Optional[Path] = None,
    render_ablation: Optional[str] = None,
    verbosity: Literal["INFO", "DEBUG"] = "INFO",
) -> None:
    """ Re-renders the prompt map of a saved grid snapshot (snapshot.pgm + snapshot.json). """
    setup_logging(verbosity)
    nav = make_config(config, render_ablation=render_ablation)
    grid = OccupancyGrid.load_snapshot(snapshot)
    if grid.trajectory:
        x, y = grid.cell_to_world(*grid.trajectory[-1])
    else:
        x, y = grid.cell_to_world(grid.height // 2, grid.width // 2)
    frontiers = detect_frontiers(grid, nav.grid.min_frontier_size)
    prompt_map = build_prompt_map(grid, frontiers, Pose(x, y), nav.cluster, nav.render)
    prompt_map.save(out)
    logging.info(f"Wrote {out.with_suffix('.png')} with {len(prompt_map.markers)} markers")


@arg("--betas", nargs="+", type=float)
@arg("--fusions", nargs="+", choices=["gaussian", "max"])
def sweep(
    betas: List[float] = [0.5, 0.6],
    fusions: List[str] = ["gaussian", "max"],
    config: Optional[Path] = None,
    suite: Optional[Path] = None,
    scenes: str = "0-9",
    episodes: int = 100,
    seed: int = 0,
    outdir: Path = Path("results/sweep"),
    reasoner: Optional[str] = None,
    n_cpus: int = 1,
    verbosity: Literal["INFO", "DEBUG"] = "INFO",
) -> None:
    """ One benchmark per (fusion, beta) pair, plus a combined sweep.csv. """
    outdir = make_outdir(outdir)
    setup_logging(verbosity, log_path=outdir / "log.txt")
    nav = make_config(config, reasoner=reasoner)
    episode_suite = load_suite(suite, scenes, episodes, seed, nav.world.meters_per_cell)
    table = run_sweep(episode_suite, nav, betas, fusions, n_cpus, outdir)
    table.to_csv(outdir / "sweep.csv", index=False)
    write_json(outdir / "sweep.json", table.to_dict(orient="records"))
    print(table.to_string(index=False))


if __name__ == "__main__":
    argh.dispatch_commands([run, episode, genscenes, render, sweep])
