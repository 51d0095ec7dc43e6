import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence

import fire  # type: ignore
import numpy as np
import pandas as pd  # type: ignore
import seaborn as sns  # type: ignore
from matplotlib import pyplot as plt  # type: ignore

from utils import setup_logging


def get_interactive():
    """ Cursed magic for determining if the code is being run in an interactive environment. """
    return getattr(sys, "ps1", None) is not None


def closefig(out: Optional[Path] = None, transparent: bool = False):
    if get_interactive() and out is None:
        plt.show()
    else:
        if out is not None:
            plt.savefig(out, transparent=transparent)
        plt.close()


def make_palette_map(key_values: np.ndarray) -> dict:
    """Given a sequence of experimental parameters, generate palette maps for representing
    parameter values."""
    logging.debug(f"key_values={key_values}")
    palette = sns.color_palette("muted", len(key_values))
    return {val: palette[j] for j, val in enumerate(sorted(key_values))}


def setup_plt(font_size: int, use_dark_background: bool) -> None:
    plt.rcParams.update({"font.size": font_size})
    if use_dark_background:
        plt.style.use("dark_background")

    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel("WARNING")


def read_report(path: Path) -> Dict:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return json.loads(path.read_text())


def read_reports(paths: Sequence[Path], names: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """ One row per report: name, sr, spl, episode count. """
    names = [Path(p).name for p in paths] if names is None else list(names)
    assert len(names) == len(paths), "Need one name per report"
    rows = []
    for name, path in zip(names, paths):
        report = read_report(path)
        rows.append(
            {"name": name, "sr": report["sr"], "spl": report["spl"], "n": report["n_episodes"]}
        )
    return pd.DataFrame(rows)


def read_episodes(paths: Sequence[Path], names: Optional[Sequence[str]] = None) -> pd.DataFrame:
    names = [Path(p).name for p in paths] if names is None else list(names)
    frames = []
    for name, path in zip(names, paths):
        df = pd.DataFrame(read_report(path)["episodes"])
        df["name"] = name
        frames.append(df)
    return pd.concat(frames, ignore_index=True)


### Plots


def plot_metrics(df: pd.DataFrame, out: Optional[Path] = None) -> None:
    """ Side by side SR and SPL bars for every report. """
    long = df.melt(id_vars=["name"], value_vars=["sr", "spl"], var_name="metric")
    long["metric"] = long.metric.str.upper()
    sns.barplot(data=long, x="name", y="value", hue="metric")
    plt.ylim(0, 100)
    plt.ylabel("%")
    plt.xlabel("")
    plt.xticks(rotation=30, ha="right")
    plt.tight_layout()
    closefig(out)


def plot_sweep(df: pd.DataFrame, metric: str, out: Optional[Path] = None) -> None:
    palette = make_palette_map(df.fusion.drop_duplicates().to_numpy())
    sns.lineplot(data=df, x="beta", y=metric, hue="fusion", marker="o", palette=palette)
    plt.xlabel(r"$\beta$")
    plt.ylabel(f"{metric.upper()} (%)")
    plt.tight_layout()
    closefig(out)


def plot_steps(episodes: pd.DataFrame, out: Optional[Path] = None) -> None:
    """ How long successful and failed episodes ran, per report. """
    sns.boxplot(data=episodes, x="name", y="steps", hue="success")
    plt.xlabel("")
    plt.ylabel("Low-level actions")
    plt.xticks(rotation=30, ha="right")
    plt.tight_layout()
    closefig(out)


def ablations(
    reports: List[str],
    outdir: Path = Path("figures"),
    names: Optional[List[str]] = None,
    font_size: int = 14,
    dark: bool = False,
    verbosity: Literal["INFO", "DEBUG"] = "INFO",
) -> None:
    """ Compares SR/SPL across benchmark output directories, e.g. full vs --no-dms. """
    setup_logging(verbosity=verbosity)
    setup_plt(font_size, dark)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [Path(r) for r in reports]

    df = read_reports(paths, names)
    plot_metrics(df, outdir / "metrics.png")
    plot_steps(read_episodes(paths, names), outdir / "steps.png")
    print(df.to_string(index=False))


def sweep(
    sweep_csv: Path,
    outdir: Path = Path("figures"),
    font_size: int = 14,
    dark: bool = False,
    verbosity: Literal["INFO", "DEBUG"] = "INFO",
) -> None:
    """ SR and SPL against beta, one line per fusion mode, from navigate.py sweep output. """
    setup_logging(verbosity=verbosity)
    setup_plt(font_size, dark)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    df = pd.read_csv(sweep_csv)
    plot_sweep(df, "sr", outdir / "sweep_sr.png")
    plot_sweep(df, "spl", outdir / "sweep_spl.png")

    print("Best configuration:")
    print(df[df.sr == df.sr.max()])


if __name__ == "__main__":
    fire.Fire({"ablations": ablations, "sweep": sweep})
