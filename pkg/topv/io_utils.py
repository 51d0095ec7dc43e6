import json
from pathlib import Path
from typing import Any


def write_json(path: Path, obj: Any) -> None:
    """ Canonical json: sorted keys and a trailing newline, so reruns diff cleanly. """
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
