# A series of sanity tests for benchmark reports and per-episode debug dumps.
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import fire  # type: ignore
import numpy as np

from topv.harness import compute_spl, compute_sr
from topv.policy import EpisodeResult
from topv.worldsim import Scene, load_scene


def result_from_row(row: Dict[str, Any]) -> EpisodeResult:
    return EpisodeResult(**row)


def assert_row_consistency(rows: List[Dict[str, Any]]) -> None:
    bad = []
    for row in rows:
        if row["path_length"] < 0 or row["steps"] < 0:
            bad.append(row)
        elif row["success"] and row["shortest_length"] is None:
            bad.append(row)
        elif row["stop_reason"] not in ("stop", "limit", "error"):
            bad.append(row)
    if bad:
        logging.error("Some report rows are inconsistent.")
        logging.error(f"The following rows are bad:\n{bad}")
        assert not bad


def assert_report_consistency(report: Dict[str, Any]) -> None:
    results = [result_from_row(row) for row in report["episodes"]]
    assert len(results) == report["n_episodes"], (len(results), report["n_episodes"])
    sr, spl = compute_sr(results), compute_spl(results)
    same_sr = math.isclose(sr, report["sr"], abs_tol=1e-5)
    if not (same_sr and math.isclose(spl, report["spl"], abs_tol=1e-5)):
        logging.error(f"Recorded sr={report['sr']}, spl={report['spl']}")
        logging.error(f"Recomputed sr={sr}, spl={spl}")
        assert False
    assert spl <= sr + 1e-9, (spl, sr)
    indices = [r.index for r in results]
    assert indices == sorted(indices), "Rows are not in episode order"


def assert_trajectory_consistency(
    scene: Scene, trajectory: np.ndarray, step_limit: int, forward_step: float
) -> None:
    assert trajectory.ndim == 2 and trajectory.shape[1] == 3, trajectory.shape
    assert trajectory.shape[0] - 1 <= step_limit, f"{trajectory.shape[0] - 1} actions"

    on_floor = np.array([scene.is_navigable(x, y) for x, y, _ in trajectory])
    if not np.all(on_floor):
        logging.error("Some poses are off the navigable floor.")
        logging.error(f"The bad poses are:\n{trajectory[~on_floor]}")
        assert np.all(on_floor)

    moves = np.linalg.norm(np.diff(trajectory[:, :2], axis=0), axis=1)
    legal = np.isclose(moves, 0.0) | np.isclose(moves, forward_step)
    if not np.all(legal):
        logging.error("Some steps move by neither zero nor one forward step.")
        logging.error(f"The bad step indices are {np.where(~legal)}")
        assert np.all(legal)


def check_dump(
    dumpdir: Path,
    step_limit: int = 500,
    forward_step: float = 0.25,
    meters_per_cell: float = 0.05,
) -> None:
    scene = load_scene((dumpdir / "scene.json").read_text(), meters_per_cell)
    trajectory = np.array(json.loads((dumpdir / "trajectory.json").read_text()))
    result = json.loads((dumpdir / "result.json").read_text())
    assert_row_consistency([result])
    assert_trajectory_consistency(scene, trajectory, step_limit, forward_step)
    assert result["steps"] >= trajectory.shape[0] - 1
    decisions = sorted(dumpdir.glob("step_*_decision.json"))
    assert len(decisions) == result["decisions"], (len(decisions), result["decisions"])
    for decision_path in decisions:
        prompt = decision_path.name.replace("_decision.json", "_prompt.png")
        assert decision_path.with_name(prompt).exists(), f"{prompt} is missing"
    n_actions = trajectory.shape[0] - 1
    logging.info(f"{dumpdir.name}: {n_actions} actions, {len(decisions)} decisions ok")


def main(outdir: Path, dumps: Optional[Path] = None) -> None:
    logging.basicConfig(level="INFO")

    outdir = Path(outdir)
    report = json.loads((outdir / "report.json").read_text())
    logging.info(f"There are {report['n_episodes']} episodes")
    logging.info(f"SR={report['sr']}, SPL={report['spl']}")
    assert_row_consistency(report["episodes"])
    assert_report_consistency(report)

    dumps = outdir / "dumps" if dumps is None else Path(dumps)
    if dumps.exists():
        for dumpdir in sorted(p for p in dumps.iterdir() if p.is_dir()):
            check_dump(
                dumpdir,
                report["config"]["policy"]["step_limit"],
                report["config"]["world"]["forward_step"],
                report["config"]["world"]["meters_per_cell"],
            )


if __name__ == "__main__":
    fire.Fire(main)
