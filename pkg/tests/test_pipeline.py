"""End-to-end pipeline runs on a small synthetic sequence."""

import json

import numpy as np
import pytest

from handfit.container import save_model, save_regressor
from handfit.energy import KeypointFrame
from handfit.formats import write_fusion_spec, write_joints_jsonl, write_keypoints
from handfit.model import HandPoseState, forward, synth_model
from handfit.pipeline import (
    ConfigError,
    config_hash,
    fit_config_from_dict,
    run_config_from_dict,
    run_pipeline,
)
from handfit.unified import (
    AlignmentMap,
    FusedSkeletonSpec,
    TrainConfig,
    build_training_set,
    train_mlp,
)

# skeleton of 11 joints + 5 fingertips matches the 16-point convention
COARSE = synth_model(5, 120, 11, 3)
FINE = synth_model(6, 160, 13, 3)


def _sequence(n_frames=3):
    rng = np.random.default_rng(0)
    base = HandPoseState(
        rng.uniform(-0.3, 0.3, size=(COARSE.joint_count - 1, 3)),
        rng.normal(size=COARSE.shape_dim) * 0.5,
        rng.normal(size=3) * 0.4,
        rng.normal(size=3) * 20,
    )
    frames, truth = [], []
    for i in range(n_frames):
        state = base.copy()
        state.theta = base.theta + 0.02 * i
        state.wrist_translation = base.wrist_translation + np.array([0.6, -0.2, 0.3]) * i
        _, skel = forward(COARSE, state)
        frames.append(KeypointFrame(0.1 * i, skel.joints.copy(),
                                    convention="synth16"))
        truth.append(skel)
    return frames, truth


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    save_model(COARSE, root / "model.uhm")

    ds = build_training_set(COARSE, FINE, AlignmentMap.identity(), 80, 0)
    reg = train_mlp(ds, hidden_sizes=(32,), config=TrainConfig(epochs=5))
    save_regressor(reg, root / "regressor.uhm")

    frames, truth = _sequence()
    write_keypoints(frames, root / "keypoints.jsonl")
    write_joints_jsonl(truth, [f.timestamp for f in frames],
                       root / "reference.jsonl")
    spec = FusedSkeletonSpec(
        [(f"c{i}", "coarse", i) for i in range(COARSE.skeleton_size)]
        + [(f"f{i}", "fine", i) for i in range(8, FINE.joint_count)])
    write_fusion_spec(spec, root / "fusion.csv")
    return root


def _base_config(root, out_name):
    return {
        "model": str(root / "model.uhm"),
        "input": str(root / "keypoints.jsonl"),
        "out_dir": str(root / out_name),
        "regressor": str(root / "regressor.uhm"),
        "fusion_spec": str(root / "fusion.csv"),
        "reference_joints": str(root / "reference.jsonl"),
        "export_meshes": True,
    }


def test_config_validation_happens_before_any_work(workspace):
    with pytest.raises(ConfigError, match="model"):
        run_config_from_dict({"input": "x", "out_dir": "y"})
    with pytest.raises(ConfigError, match="input"):
        run_config_from_dict({"model": "x", "out_dir": "y"})
    with pytest.raises(ConfigError, match="output directory"):
        run_config_from_dict({"model": "x", "input": "y"})
    with pytest.raises(ConfigError, match="does not exist"):
        run_config_from_dict({"model": "/no/such/model.uhm",
                              "input": str(workspace / "keypoints.jsonl"),
                              "out_dir": str(workspace / "out")})


def test_unknown_config_keys_are_rejected():
    with pytest.raises(ConfigError, match="unknown fine-stage option"):
        fit_config_from_dict({"fine": {"learning_rate": 1.0}}, None)
    with pytest.raises(ConfigError, match="unknown optimizer option"):
        fit_config_from_dict({"coarse": {"momentum": 0.9}}, None)


def test_full_run_writes_every_artifact(workspace):
    config = run_config_from_dict(_base_config(workspace, "out"))
    fit_report, eval_report = run_pipeline(config)
    out = workspace / "out"

    for name in ("states.jsonl", "trace.csv", "joints.jsonl",
                 "derived_joints.jsonl", "fused_joints.jsonl",
                 "metrics.csv", "metrics.txt", "manifest.json"):
        assert (out / name).exists(), name
    for fig in ("energy_trace.png", "energy_breakdown.png", "joint_error.png"):
        assert (out / "figures" / fig).stat().st_size > 0, fig
    objs = sorted((out / "meshes").glob("*.obj"))
    assert len(objs) == 3

    assert len(fit_report.fitted) == 3
    assert eval_report.pj_euclid < 0.25

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["frames"] == 3 and manifest["fitted"] == 3
    assert manifest["config_hash"] == config_hash(config)


def test_reruns_are_byte_identical(workspace):
    cfg_a = run_config_from_dict(_base_config(workspace, "rerun_a"))
    cfg_b = run_config_from_dict(_base_config(workspace, "rerun_b"))
    run_pipeline(cfg_a)
    run_pipeline(cfg_b)
    out_a, out_b = workspace / "rerun_a", workspace / "rerun_b"
    files = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
    assert files
    for rel in files:
        if rel.name == "manifest.json":
            continue  # embeds the config hash, which includes out_dir
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel


def test_fusion_without_regressor_is_rejected(workspace):
    raw = _base_config(workspace, "bad")
    raw.pop("regressor")
    config = run_config_from_dict(raw)
    with pytest.raises(ConfigError, match="requires a regressor"):
        run_pipeline(config)
