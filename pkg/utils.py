import logging
import sys
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import arrow


def setup_logging(
    verbosity: Literal["INFO", "DEBUG"],
    log_path: Optional[Path] = None,
) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if log_path is not None:
        handlers.append(logging.FileHandler(str(log_path), mode="w"))

    logging.basicConfig(
        level=verbosity, format="%(levelname)s:%(asctime)s:%(message)s", handlers=handlers
    )

    for noisy in ("matplotlib", "PIL", "urllib3"):
        logging.getLogger(noisy).setLevel(logging.WARNING)


def parse_seeds(seeds: Union[str, int, Tuple[int, ...]]) -> List[int]:
    """ Accepts "3-7", "1,4,9", a count n (meaning 0..n-1) or an explicit tuple. """
    if isinstance(seeds, tuple):
        return list(seeds)
    elif isinstance(seeds, int):
        return list(range(seeds))
    elif isinstance(seeds, str):
        if "-" in seeds:
            assert "," not in seeds, "Cannot mix ranges and commas"
            start_str, stop_str = seeds.split("-")
            return list(range(int(start_str), int(stop_str) + 1))
        elif "," in seeds:
            return [int(token) for token in seeds.split(",")]
        else:
            return list(range(int(seeds)))
    else:
        raise ValueError(f"Unsupported seeds string {seeds}")


def make_outdir(outdir: Union[str, Path], timestamp: bool = False) -> Path:
    outdir = Path(outdir)
    if timestamp:
        outdir = outdir / arrow.utcnow().format("YYYY-MM-DDTHH-mm-ss")

    outdir.mkdir(parents=True, exist_ok=True)

    return outdir
