"""
JSON documents for the representations and the plain-text tensor fixture format.

Matrices and cores are stored as flat column-major number lists next to
their shape, so a document reads the same way the in-memory layout does.
"""
from __future__ import annotations

from functools import singledispatch
from pathlib import Path

import numpy as np

from core.decomp import CPRep, HTRep, TTRep
from core.errors import DatasetError, DomainError
from core.tensor import DenseTensor
from core.tree import tree_from_nested
from utils.io_helpers import atomic_open, read_json, write_json


def _pack(array: np.ndarray) -> dict:
    array = np.asarray(array, dtype=np.float64)
    return {"shape": list(array.shape), "data": array.reshape(-1, order="F").tolist()}


def _unpack(doc: dict) -> np.ndarray:
    return np.asarray(doc["data"], dtype=np.float64).reshape(doc["shape"], order="F")


@singledispatch
def to_json(rep) -> dict:
    raise DomainError(f"no JSON form for {type(rep).__name__}")


@to_json.register
def _(rep: DenseTensor) -> dict:
    return {"format": "dense", "dims": list(rep.dims), "data": rep.data.tolist()}


@to_json.register
def _(rep: TTRep) -> dict:
    return {
        "format": "tt",
        "dims": list(rep.dims),
        "ranks": rep.ranks,
        "cores": [_pack(c) for c in rep.cores],
    }


@to_json.register
def _(rep: HTRep) -> dict:
    return {
        "format": "ht",
        "dims": list(rep.dims),
        "tree": rep.tree.to_nested(),
        "ranks": rep.ranks,
        "leaf_factors": {str(i): _pack(v) for i, v in sorted(rep.leaf_factors.items())},
        "transfer": {str(i): _pack(c) for i, c in sorted(rep.transfer.items())},
    }


@to_json.register
def _(rep: CPRep) -> dict:
    return {
        "format": "cp",
        "dims": list(rep.dims),
        "rank": rep.rank,
        "factors": [_pack(u) for u in rep.factors],
        "last_factor": _pack(rep.last_factor),
    }


def from_json(doc: dict):
    kind = doc.get("format")
    try:
        if kind == "dense":
            return DenseTensor(tuple(doc["dims"]), np.asarray(doc["data"], dtype=np.float64))
        if kind == "tt":
            return TTRep([_unpack(c) for c in doc["cores"]])
        if kind == "ht":
            tree = tree_from_nested(doc["tree"], doc["ranks"])
            return HTRep(
                tree,
                {int(i): _unpack(v) for i, v in doc["leaf_factors"].items()},
                {int(i): _unpack(c) for i, c in doc["transfer"].items()},
            )
        if kind == "cp":
            return CPRep([_unpack(u) for u in doc["factors"]], _unpack(doc["last_factor"]))
    except KeyError as e:
        raise DomainError(f"{kind} document is missing field {e}") from None
    raise DomainError(f"unknown representation format {kind!r}")


def save_rep(rep, path):
    write_json(path, to_json(rep))


def load_rep(path):
    try:
        return from_json(read_json(path))
    except FileNotFoundError:
        raise DatasetError(f"model file not found: {path}") from None


def write_tensor_text(tensor: DenseTensor, path):
    """Order, dims, then one column-major value per line."""
    with atomic_open(path) as f:
        f.write(f"{tensor.order}\n")
        f.write(" ".join(str(d) for d in tensor.dims) + "\n")
        for value in tensor.data:
            f.write(f"{value:.17g}\n")


def read_tensor_text(path) -> DenseTensor:
    lines = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if len(lines) < 2:
        raise DomainError(f"{path}: tensor fixture needs an order line and a dims line")
    order = int(lines[0])
    dims = tuple(int(d) for d in lines[1].split())
    if len(dims) != order:
        raise DomainError(f"{path}: order {order} but {len(dims)} dims given")
    data = np.array([float(v) for v in lines[2:]], dtype=np.float64)
    return DenseTensor(dims, data)
