"""Round-trips and error reporting for every on-disk format."""

import json

import numpy as np
import pytest

from handfit.energy import KeypointFrame
from handfit.formats import (
    KeypointFormatError,
    export_obj,
    load_conventions,
    load_fusion_spec,
    load_joints_jsonl,
    load_states_jsonl,
    mapping_for,
    parse_keypoints,
    parse_obj,
    write_fusion_spec,
    write_joints_jsonl,
    write_keypoints,
    write_states_jsonl,
)
from handfit.metrics import evaluate
from handfit.model import HandPoseState, Mesh, Skeleton, forward, synth_model
from handfit.unified import FusedSkeletonSpec


def test_keypoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    frames = []
    for i in range(3):
        mask = np.ones(21, dtype=bool)
        mask[rng.integers(0, 21)] = False
        frames.append(KeypointFrame(0.5 * i, rng.normal(size=(21, 3)) * 40,
                                    mask, convention="synth21"))
    path = tmp_path / "kp.jsonl"
    write_keypoints(frames, path)
    back = parse_keypoints(path)
    assert len(back) == 3
    for a, b in zip(frames, back):
        assert a.timestamp == b.timestamp
        assert np.array_equal(a.mask, b.mask)
        assert np.allclose(a.keypoints[a.mask], b.keypoints[b.mask])
        assert b.convention == "synth21"


def test_keypoint_unit_conversion(tmp_path):
    pts = np.full((21, 3), 0.05)  # metres
    path = tmp_path / "kp.jsonl"
    rec = {"t": 0.0, "pts": pts.tolist(), "convention": "synth21_m"}
    path.write_text(json.dumps(rec) + "\n")
    frames = parse_keypoints(path)
    assert np.allclose(frames[0].keypoints, 50.0)  # converted to mm


def test_keypoint_errors_carry_line_numbers(tmp_path):
    good = json.dumps({"t": 0.0, "pts": [[0.0, 0.0, 0.0]] * 21,
                       "convention": "synth21"})
    cases = [
        ("{broken", "bad JSON"),
        (json.dumps({"t": 0.0, "pts": [[0.0] * 3] * 21}), "missing field"),
        (json.dumps({"t": 0.0, "pts": [[0.0] * 3] * 21,
                     "convention": "mystery"}), "unknown convention"),
        (json.dumps({"t": 0.0, "pts": [[0.0] * 3] * 5,
                     "convention": "synth21"}), "expects 21 points"),
        (json.dumps({"t": 0.0, "pts": [[0.0] * 2] * 21,
                     "convention": "synth21"}), "x, y, z"),
        (json.dumps({"t": 0.0, "pts": [[None, 0.0, 0.0]] + [[0.0] * 3] * 20,
                     "convention": "synth21"}), "non-finite"),
    ]
    for bad, message in cases:
        path = tmp_path / "kp.jsonl"
        path.write_text(good + "\n" + bad + "\n")
        with pytest.raises(KeypointFormatError, match=message) as info:
            parse_keypoints(path)
        assert "line 2" in str(info.value)


def test_blank_lines_are_skipped(tmp_path):
    rec = json.dumps({"t": 0.0, "pts": [[0.0] * 3] * 21, "convention": "synth21"})
    path = tmp_path / "kp.jsonl"
    path.write_text("\n" + rec + "\n\n")
    assert len(parse_keypoints(path)) == 1


def test_conventions_table_and_mapping():
    conv = load_conventions()
    for tag in ("synth21", "synth21_m", "synth16", "synth30"):
        assert conv[tag]["count"] == len(conv[tag]["joint_map"])
    assert conv["synth21_m"]["unit_scale_to_mm"] == 1000.0
    assert np.array_equal(mapping_for("synth16"), np.arange(16))
    with pytest.raises(KeyError, match="unknown convention"):
        mapping_for("nope")


def test_obj_round_trip(tmp_path):
    model = synth_model(2, 64, 6, 1)
    mesh, _ = forward(model, HandPoseState.zero(6, 1))
    path = tmp_path / "hand.obj"
    export_obj(mesh, path)
    back = parse_obj(path)
    assert np.allclose(back.vertices, mesh.vertices, atol=5e-7)
    assert np.array_equal(back.faces, mesh.faces)


def test_obj_parser_reports_short_lines(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 1.0 2.0\n")
    with pytest.raises(ValueError, match=":1"):
        parse_obj(path)


def test_fusion_spec_round_trip(tmp_path):
    spec = FusedSkeletonSpec([("root", "coarse", 0), ("tip", "fine", 24)])
    path = tmp_path / "fusion.csv"
    write_fusion_spec(spec, path)
    back = load_fusion_spec(path)
    assert back.entries == spec.entries
    path.write_text("wrong,header,here\n")
    with pytest.raises(ValueError, match="header"):
        load_fusion_spec(path)


def test_states_jsonl_round_trip(tmp_path):
    from handfit.fitter import fit_sequence
    model = synth_model(2, 64, 6, 1)
    state = HandPoseState(np.full((5, 3), 0.1), np.zeros(1),
                          np.zeros(3), np.zeros(3))
    _, skel = forward(model, state)
    frame = KeypointFrame(0.0, skel.joints.copy())
    bad = KeypointFrame(1.0, skel.joints,
                        np.zeros(skel.joints.shape[0], dtype=bool))
    report = fit_sequence(model, [frame, bad])
    path = tmp_path / "states.jsonl"
    write_states_jsonl(report, path)
    states = load_states_jsonl(path)
    assert len(states) == 2 and states[1] is None
    assert np.allclose(states[0].theta, report.frames[0].state.theta)
    assert np.allclose(states[0].beta, report.frames[0].state.beta)


def test_joints_jsonl_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    skels = [Skeleton(rng.normal(size=(4, 3)), list("abcd"), "fused")
             for _ in range(2)]
    path = tmp_path / "joints.jsonl"
    write_joints_jsonl(skels, [0.0, 0.5], path)
    back = load_joints_jsonl(path)
    assert [t for t, _ in back] == [0.0, 0.5]
    for (_, s_back), s in zip(back, skels):
        assert np.allclose(s_back.joints, s.joints)
        assert s_back.names == s.names
        assert s_back.convention == "fused"
