import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.decomp import random_cp, random_ht, random_tt, to_full
from core.errors import DatasetError, DomainError
from core.serialize import from_json, load_rep, read_tensor_text, save_rep, to_json, write_tensor_text
from core.tree import tree_from_nested


@pytest.fixture
def reps(rng, example_tensor):
    return {
        "dense": example_tensor,
        "tt": random_tt(3, 3, [1, 2, 2, 1], rng),
        "ht": random_ht(3, tree_from_nested([[1, 3], 2], 2), rng),
        "cp": random_cp(3, 3, 2, rng),
    }


@pytest.mark.parametrize("kind", ["dense", "tt", "ht", "cp"])
def test_save_and_load_preserve_tensor(kind, reps, tmp_path):
    rep = reps[kind]
    path = tmp_path / f"{kind}.json"
    save_rep(rep, path)
    doc = json.loads(path.read_text())
    assert doc["format"] == kind
    loaded = load_rep(path)
    assert type(loaded) is type(rep)
    assert_allclose(to_full(loaded).data, to_full(rep).data, rtol=0, atol=0)


def test_ht_document_keeps_tree(reps):
    doc = to_json(reps["ht"])
    assert doc["tree"] == [[1, 3], 2]
    assert from_json(doc).tree.mode_order == (1, 3, 2)


def test_arrays_are_column_major():
    doc = to_json(random_cp(2, 2, 2, np.random.default_rng(0)))
    last = np.asarray(doc["last_factor"]["data"]).reshape(doc["last_factor"]["shape"], order="F")
    assert_allclose(last, from_json(doc).last_factor)


def test_unknown_format():
    with pytest.raises(DomainError):
        from_json({"format": "tucker"})
    with pytest.raises(DomainError):
        from_json({"format": "tt"})


def test_missing_model_file(tmp_path):
    with pytest.raises(DatasetError):
        load_rep(tmp_path / "absent.json")


def test_tensor_text_fixture(example_tensor, tmp_path):
    path = tmp_path / "example.txt"
    write_tensor_text(example_tensor, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "3"
    assert lines[1] == "2 2 2"
    assert float(lines[3]) == -1.5
    assert_allclose(read_tensor_text(path).data, example_tensor.data, rtol=0, atol=0)


def test_tensor_text_dims_mismatch(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3\n2 2\n1\n2\n3\n4\n")
    with pytest.raises(DomainError):
        read_tensor_text(path)
