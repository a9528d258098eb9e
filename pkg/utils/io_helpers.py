import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np


@contextmanager
def atomic_open(path, mode="w"):
    """
    Open a temp file next to `path` and move it into place on success.

    If the block raises, the temp file is removed and `path` is left
    untouched, so a failing command never leaves a half-written output.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_text(path, text: str):
    with atomic_open(path) as f:
        f.write(text)


def write_json(path, payload):
    with atomic_open(path) as f:
        json.dump(payload, f, indent=2, default=_json_default)
        f.write("\n")


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)


def write_matrix_csv(path, matrix):
    # rows = state components, columns = samples
    with atomic_open(path) as f:
        np.savetxt(f, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")


def read_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")
