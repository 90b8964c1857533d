import json

import numpy as np
import pytest

from conftest import random_params
from hmrnn.core import ObservationDataset
from hmrnn.errors import InvalidInputError
from hmrnn.io import (
    dumps,
    load_dataset,
    read_model,
    read_sequences,
    save_dataset,
    write_json,
    write_model,
)


def test_model_round_trip_is_exact(tmp_path, rng):
    p = random_params(rng, 4, 3)
    write_model(tmp_path / "m.json", p)
    back = read_model(tmp_path / "m.json")
    for a, b in ((p.pi, back.pi), (p.P, back.P), (p.Psi, back.Psi)):
        np.testing.assert_array_equal(a, b)


def test_read_model_from_fit_report(tmp_path, rng):
    p = random_params(rng, 2, 2)
    write_json(tmp_path / "r.json", {"model": p.to_dict(), "iterations": 3})
    np.testing.assert_array_equal(read_model(tmp_path / "r.json").P, p.P)


def test_read_model_rejects_wrong_dimensions(tmp_path, rng):
    d = random_params(rng, 2, 2).to_dict()
    d["k"] = 3
    write_json(tmp_path / "bad.json", d)
    with pytest.raises(InvalidInputError):
        read_model(tmp_path / "bad.json")


def test_ragged_sequences_round_trip(tmp_path):
    data = ObservationDataset([[0, 1, 2], [2], [1, 1, 0, 2]], ids=["a", "b", "c"])
    paths = save_dataset(tmp_path, data)
    back = read_sequences(paths["sequences"])
    assert back.ids == ["a", "b", "c"]
    for x, y in zip(back.sequences, data.sequences):
        np.testing.assert_array_equal(x, y)


def test_gaps_and_junk_rejected(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("a,0,,1\n")
    with pytest.raises(InvalidInputError, match="missing observation"):
        read_sequences(f)
    f.write_text("a,0,x\n")
    with pytest.raises(InvalidInputError):
        read_sequences(f)
    f.write_text("a,0,-1\n")
    with pytest.raises(InvalidInputError):
        read_sequences(f)


def test_trailing_blanks_and_comments_ignored(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("# header comment\na,0,1,,\n\nb,1\n")
    data = read_sequences(f)
    assert data.ids == ["a", "b"]
    assert data.lengths.tolist() == [2, 1]


def test_covariates_and_aux(tmp_path):
    (tmp_path / "s.csv").write_text("p1,0,1,2\np2,1,1\n")
    (tmp_path / "x.csv").write_text("seq_id,x_1,x_2\np2,3.5,4\np1,1,2\n")
    (tmp_path / "a.csv").write_text("seq_id,t,value\np1,0,1\np1,2,0\np2,1,1\np2,0,NA\n")
    data = load_dataset(tmp_path / "s.csv", tmp_path / "x.csv", tmp_path / "a.csv")
    np.testing.assert_array_equal(data.covariates, [[1, 2], [3.5, 4]])
    np.testing.assert_array_equal(data.aux_mask, [[1, 0, 1], [0, 1, 0]])
    assert data.aux_values[0, 0] == 1 and data.aux_values[1, 1] == 1
    (tmp_path / "bad.csv").write_text("seq_id,t,value\np2,5,1\n")
    with pytest.raises(InvalidInputError):
        load_dataset(tmp_path / "s.csv", aux=tmp_path / "bad.csv")
    (tmp_path / "x2.csv").write_text("seq_id,x_1\np1,1\n")
    with pytest.raises(InvalidInputError, match="p2"):
        load_dataset(tmp_path / "s.csv", tmp_path / "x2.csv")


def test_json_handles_numpy_types():
    text = dumps({"a": np.float64(0.1), "b": np.arange(3), "c": np.bool_(True), 4: np.int32(2)})
    assert json.loads(text) == {"a": 0.1, "b": [0, 1, 2], "c": True, "4": 2}
