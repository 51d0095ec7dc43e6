import json
from pathlib import Path
from typing import Dict

import pytest
from hypothesis import given, settings
from hypothesis.strategies import booleans, floats, lists, tuples

import check_episode_output
from topv.config import MapConfig, NavConfig, override
from topv.harness import (
    REPORT_COLUMNS,
    Suite,
    compute_spl,
    compute_sr,
    make_suite,
    run_benchmark,
    run_one,
    spl_term,
    sweep,
)
from topv.policy import Episode, EpisodeResult
from topv.scenegen import SceneSpec

FAST = override(
    override(NavConfig(), grid=MapConfig(width=400, height=400)), "policy", step_limit=80
)
TINY = SceneSpec(n_rooms=2, objects_per_room=2)


def result(success: bool, path_length: float, shortest: float) -> EpisodeResult:
    return EpisodeResult(success, 10, path_length, shortest, "bed", 0)


def test_sr_and_spl():
    results = [result(True, 10.0, 5.0), result(False, 3.0, 2.0)]
    assert compute_sr(results) == 50.0
    assert compute_spl(results) == 25.0
    assert compute_spl([result(True, 10.0, 5.0)]) == 50.0
    assert compute_spl([result(True, 4.0, 5.0)]) == 100.0


def test_spl_edge_cases():
    assert spl_term(result(True, 0.0, 0.0)) == 1.0
    assert spl_term(result(False, 0.0, 0.0)) == 0.0
    assert spl_term(EpisodeResult(True, 3, 1.0, None, "bed", 0)) == 0.0
    with pytest.raises(ValueError):
        compute_sr([])
    with pytest.raises(ValueError):
        compute_spl([])


@settings(deadline=None)
@given(
    rows=lists(
        tuples(booleans(), floats(0.0, 50.0), floats(0.0, 50.0)), min_size=1, max_size=30
    )
)
def test_spl_never_exceeds_sr(rows):
    results = [result(*row) for row in rows]
    sr, spl = compute_sr(results), compute_spl(results)
    assert 0.0 <= spl <= sr + 1e-9 <= 100.0 + 1e-9


def test_make_suite_round_robin():
    suite = make_suite([0, 1], 5, seed=3, spec=TINY)
    assert list(suite.scenes) == ["scene_000", "scene_001"]
    assert [e.scene_id for e in suite.episodes] == ["scene_000", "scene_001"] * 2 + ["scene_000"]
    assert [e.index for e in suite.episodes] == list(range(5))
    assert [e.seed for e in suite.episodes] == [3 * 100_003 + i for i in range(5)]
    for episode in suite.episodes:
        scene = suite.scenes[episode.scene_id]
        assert episode.target in scene.targets
        assert episode.start.position == scene.start.position
    again = make_suite([0, 1], 5, seed=3, spec=TINY)
    assert again.episodes == suite.episodes


def test_make_suite_needs_episodes():
    with pytest.raises(ValueError):
        make_suite([], 3)
    with pytest.raises(ValueError):
        make_suite([0], 0)


def test_suite_rejects_unknown_scene():
    with pytest.raises(ValueError):
        Suite({}, [Episode(0, "missing", "bed", 0)])


def test_suite_save_and_load(tmp_path):
    suite = make_suite([0], 3, spec=TINY)
    suite.save(tmp_path)
    assert (tmp_path / "scenes" / "scene_000.json").exists()
    loaded = Suite.load(tmp_path)
    assert loaded.episodes == suite.episodes
    assert loaded.scenes["scene_000"].objects == suite.scenes["scene_000"].objects


def test_run_one_turns_errors_into_failures(monkeypatch):
    monkeypatch.delenv("TOPV_REASONER_URL", raising=False)
    suite = make_suite([0], 1, spec=TINY)
    config = override(FAST, "reasoner", kind="remote")
    (episode,) = suite.episodes
    row = run_one(suite.scenes[episode.scene_id], episode, config)
    assert not row.success
    assert row.stop_reason == "error"
    assert "endpoint" in row.error
    assert row.shortest_length is not None


@pytest.mark.slow
def test_benchmark_report(tmp_path):
    suite = make_suite([0, 1], 4, spec=TINY)
    config = override(FAST, "reasoner", kind="scripted")
    report = run_benchmark(suite, config, dump_root=tmp_path / "dumps")
    assert [row.index for row in report.rows] == [0, 1, 2, 3]
    assert report.sr == compute_sr(report.rows)
    assert report.spl <= report.sr
    assert list(report.frame().columns) == REPORT_COLUMNS

    report.write(tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["n_episodes"] == 4
    assert doc["fingerprint"] == report.fingerprint
    assert (tmp_path / "report.txt").read_text().startswith("SR")
    check_episode_output.main(tmp_path)


@pytest.mark.slow
def test_parallel_matches_serial():
    suite = make_suite([0], 2, spec=TINY)
    serial = run_benchmark(suite, FAST, n_jobs=1)
    parallel = run_benchmark(suite, FAST, n_jobs=2)
    assert [r.to_dict() for r in serial.rows] == [r.to_dict() for r in parallel.rows]
    assert serial.fingerprint == parallel.fingerprint


@pytest.mark.slow
def test_sweep(tmp_path):
    suite = make_suite([0], 1, spec=TINY)
    table = sweep(suite, FAST, [0.5, 0.6], ["gaussian", "max"], outdir=tmp_path)
    assert len(table) == 4
    assert list(table.columns) == ["fusion", "beta", "sr", "spl", "fingerprint"]
    assert table.fingerprint.nunique() == 4
    assert (tmp_path / "max_beta0.6" / "report.json").exists()


@pytest.mark.slow
def test_failing_server_episode_runs_on_fallback(two_rooms, failing_server):
    config = override(
        override(FAST, "policy", step_limit=60),
        "reasoner",
        kind="remote",
        endpoint=failing_server.url,
        retries=1,
        backoff=0.01,
        deadline=5.0,
    )
    row = run_one(two_rooms, Episode(0, "two_rooms", "bed", 0), config)
    assert row.stop_reason != "error"
    assert row.error is None
    assert row.steps <= 60
    assert row.decisions >= 1
    # Every query is tried twice before the built-in reasoner answers it.
    assert len(failing_server.requests) >= 2
    assert len(failing_server.requests) % 2 == 0


def tree_bytes(root: Path) -> Dict[str, bytes]:
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


@pytest.mark.slow
def test_reruns_write_identical_bytes(tmp_path):
    suite = make_suite([0, 1], 2, spec=TINY)
    for run, n_jobs in (("first", 1), ("second", 2)):
        report = run_benchmark(suite, FAST, n_jobs=n_jobs, dump_root=tmp_path / run / "dumps")
        report.write(tmp_path / run)
    first, second = tree_bytes(tmp_path / "first"), tree_bytes(tmp_path / "second")
    assert "report.json" in first and any(name.endswith(".png") for name in first)
    assert sorted(first) == sorted(second)
    for name in first:
        assert first[name] == second[name], name


@pytest.mark.slow
def test_reasoner_ordering():
    suite = make_suite(range(25), 25, seed=0)
    sr = {
        kind: run_benchmark(suite, override(NavConfig(), "reasoner", kind=kind), n_jobs=-1).sr
        for kind in ("scripted", "heuristic", "random")
    }
    assert sr["scripted"] == 100.0
    assert sr["random"] < sr["scripted"]
    assert sr["random"] <= sr["heuristic"] <= sr["scripted"]
