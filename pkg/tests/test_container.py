"""Binary container round-trips and corruption detection."""

import json
import struct

import numpy as np
import pytest

from handfit.container import (
    ContainerError,
    load_model,
    load_regressor,
    read_container,
    save_model,
    save_regressor,
    write_container,
)
from handfit.model import synth_model
from handfit.unified import MlpRegressor


def test_write_read_round_trip(tmp_path):
    path = tmp_path / "arrays.uhm"
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 3)).astype(np.float32).astype(np.float64)
    b = rng.integers(0, 10, size=7)
    write_container(path, [("a", a), ("b", b)], {"kind": "test", "note": "x"})
    arrays, meta = read_container(path)
    assert meta == {"kind": "test", "note": "x"}
    assert np.array_equal(arrays["a"], a)
    assert np.array_equal(arrays["b"], b)
    assert arrays["b"].dtype == np.int64


def test_model_round_trip_is_bit_exact(tmp_path):
    model = synth_model(7, 200, 16, 10)
    path = tmp_path / "model.uhm"
    save_model(model, path)
    loaded = load_model(path)
    for name in ("template_vertices", "faces", "shape_basis", "skinning_weights",
                 "kinematic_tree", "joint_regressor", "fingertip_vertex_ids"):
        assert np.array_equal(getattr(model, name), getattr(loaded, name)), name
    assert loaded.joint_names == model.joint_names
    assert loaded.name == model.name
    # saving the loaded model reproduces the same bytes
    path2 = tmp_path / "model2.uhm"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_regressor_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    reg = MlpRegressor(
        weights=[rng.normal(size=(6, 4)).astype(np.float32).astype(np.float64),
                 rng.normal(size=(4, 9)).astype(np.float32).astype(np.float64)],
        biases=[np.zeros(4), rng.normal(size=9).astype(np.float32).astype(np.float64)],
        skip=rng.normal(size=(6, 9)).astype(np.float32).astype(np.float64),
        target_convention="fine25",
        metadata={"seed": 3, "hidden_sizes": [4]},
    )
    path = tmp_path / "reg.uhm"
    save_regressor(reg, path)
    loaded = load_regressor(path)
    for w1, w2 in zip(reg.weights, loaded.weights):
        assert np.array_equal(w1, w2)
    for b1, b2 in zip(reg.biases, loaded.biases):
        assert np.array_equal(b1, b2)
    assert np.array_equal(loaded.skip, reg.skip)
    assert loaded.target_convention == "fine25"
    assert loaded.metadata["seed"] == 3


def test_truncated_file_is_rejected(tmp_path):
    path = tmp_path / "model.uhm"
    save_model(synth_model(1, 64, 6, 1), path)
    data = path.read_bytes()
    for cut in (2, len(data) // 2, len(data) - 3):
        clipped = tmp_path / "clipped.uhm"
        clipped.write_bytes(data[:cut])
        with pytest.raises(ContainerError, match="short|truncat"):
            read_container(clipped)


def test_corrupted_payload_fails_checksum(tmp_path):
    path = tmp_path / "model.uhm"
    save_model(synth_model(1, 64, 6, 1), path)
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    bad = tmp_path / "bad.uhm"
    bad.write_bytes(bytes(data))
    with pytest.raises(ContainerError, match="checksum"):
        read_container(bad)


def test_wrong_magic_is_rejected(tmp_path):
    path = tmp_path / "bad.uhm"
    manifest = json.dumps({"format": "ZIP", "version": 1}).encode()
    path.write_bytes(struct.pack("<I", len(manifest)) + manifest)
    with pytest.raises(ContainerError, match="not a UHM"):
        read_container(path)


def test_bad_manifest_json_is_rejected(tmp_path):
    path = tmp_path / "bad.uhm"
    garbage = b"{not json"
    path.write_bytes(struct.pack("<I", len(garbage)) + garbage)
    with pytest.raises(ContainerError, match="manifest JSON"):
        read_container(path)


def test_kind_mismatch(tmp_path):
    model_path = tmp_path / "model.uhm"
    save_model(synth_model(1, 64, 6, 1), model_path)
    with pytest.raises(ContainerError, match="not a regressor"):
        load_regressor(model_path)
    reg = MlpRegressor(weights=[np.eye(3)], biases=[np.zeros(3)])
    reg_path = tmp_path / "reg.uhm"
    save_regressor(reg, reg_path)
    with pytest.raises(ContainerError, match="not a hand model"):
        load_model(reg_path)


def test_missing_model_field(tmp_path):
    path = tmp_path / "partial.uhm"
    write_container(path, [("faces", np.zeros((1, 3), dtype=int))],
                    {"kind": "hand_model"})
    with pytest.raises(ContainerError, match="missing fields"):
        load_model(path)


def test_float_fields_are_stored_as_float32(tmp_path):
    # a value that needs float64 precision is rounded on write, so loading a
    # saved model is idempotent (save(load(x)) == x byte-for-byte)
    path = tmp_path / "f32.uhm"
    value = np.array([[1.0 + 1e-12, 0.0, 0.0]])
    write_container(path, [("x", value)], {})
    arrays, _ = read_container(path)
    assert arrays["x"][0, 0] == np.float32(1.0 + 1e-12)
