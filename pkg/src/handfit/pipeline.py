"""End-to-end run configuration and orchestration: parse, fit, derive, fuse, evaluate."""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import formats, report as figures
from .container import load_model, load_regressor
from .energy import EnergyWeights
from .fitter import FineConfig, FitConfig, fit_sequence
from .metrics import evaluate
from .model import forward
from .optim import OptimizerConfig
from .unified import fuse_skeletons, predict_joints


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass
class RunConfig:
    model: str
    input: str
    out_dir: str
    seed: int = 0
    regressor: str = None
    fusion_spec: str = None
    reference_states: str = None
    reference_joints: str = None
    conventions: str = None
    export_meshes: bool = False
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    fit: FitConfig = None
    raw: dict = field(default_factory=dict)

    def validate(self):
        if not self.model:
            raise ConfigError("config is missing the model path")
        if not self.input:
            raise ConfigError("config is missing the input keypoint path")
        if not self.out_dir:
            raise ConfigError("config is missing the output directory")
        for name in ("model", "input", "regressor", "fusion_spec",
                     "reference_states", "reference_joints", "conventions"):
            path = getattr(self, name)
            if path and not Path(path).exists():
                raise ConfigError(f"{name} path does not exist: {path}")
        return self


def _optimizer_config(section, defaults):
    cfg = defaults
    for key, value in (section or {}).items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown optimizer option {key!r}")
        setattr(cfg, key, value)
    return cfg


def fit_config_from_dict(section, weights):
    section = section or {}
    config = FitConfig(weights=weights)
    config.coarse = _optimizer_config(section.get("coarse"), config.coarse)
    fine = config.fine
    for key, value in (section.get("fine") or {}).items():
        if not hasattr(fine, key):
            raise ConfigError(f"unknown fine-stage option {key!r}")
        setattr(fine, key, value)
    for key in ("warm_start", "lock_beta", "optimize_translation",
                "coarse_restarts", "divergence_factor"):
        if key in section:
            setattr(config, key, section[key])
    if "mapping" in section and section["mapping"] is not None:
        config.mapping = np.asarray(section["mapping"], dtype=int)
    return config


def load_run_config(path, overrides=None):
    with open(path) as fh:
        raw = json.load(fh)
    raw.update(overrides or {})
    return run_config_from_dict(raw)


def run_config_from_dict(raw):
    weights = EnergyWeights(**raw.get("weights", {}))
    config = RunConfig(
        model=raw.get("model"),
        input=raw.get("input"),
        out_dir=raw.get("out_dir"),
        seed=raw.get("seed", 0),
        regressor=raw.get("regressor"),
        fusion_spec=raw.get("fusion_spec"),
        reference_states=raw.get("reference_states"),
        reference_joints=raw.get("reference_joints"),
        conventions=raw.get("conventions"),
        export_meshes=raw.get("export_meshes", False),
        weights=weights,
        fit=fit_config_from_dict(raw.get("fit"), weights),
        raw=raw,
    )
    return config.validate()


def config_hash(config):
    blob = json.dumps(config.raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def run_pipeline(config, verbose=False):
    """Parse -> fit -> derive joints -> fuse -> evaluate -> write artifacts.

    Returns (FitReport, EvalReport or None). Partial outputs are flushed per
    stage, so earlier artifacts survive a later-stage failure.
    """
    config.validate()
    out = Path(config.out_dir)
    (out / "figures").mkdir(parents=True, exist_ok=True)

    conventions = formats.load_conventions(config.conventions)
    model = load_model(config.model)
    frames = formats.parse_keypoints(config.input, conventions)
    if not frames:
        raise ConfigError(f"no frames in {config.input}")

    fit_cfg = config.fit or FitConfig(weights=config.weights)
    if fit_cfg.mapping is None:
        fit_cfg.mapping = formats.mapping_for(frames[0].convention, conventions)

    if verbose:
        print(f"fitting {len(frames)} frames with model {model.name}")
    fit_report = fit_sequence(model, frames, fit_cfg)

    formats.write_states_jsonl(fit_report, out / "states.jsonl")
    formats.write_trace_csv(fit_report, out / "trace.csv")
    figures.plot_energy_traces(fit_report, out / "figures" / "energy_trace.png")
    figures.plot_energy_breakdown(fit_report, out / "figures" / "energy_breakdown.png")

    meshes, skeletons, timestamps = [], [], []
    for frame, result in zip(frames, fit_report.frames):
        if result.failed:
            continue
        mesh, skel = forward(model, result.state)
        meshes.append(mesh)
        skeletons.append(skel)
        timestamps.append(frame.timestamp)
    formats.write_joints_jsonl(skeletons, timestamps, out / "joints.jsonl")

    if config.export_meshes:
        mesh_dir = out / "meshes"
        mesh_dir.mkdir(exist_ok=True)
        for i, mesh in enumerate(meshes):
            formats.export_obj(mesh, mesh_dir / f"frame_{i:04d}.obj")

    derived = None
    if config.regressor:
        regressor = load_regressor(config.regressor)
        derived = [predict_joints(regressor, mesh) for mesh in meshes]
        formats.write_joints_jsonl(derived, timestamps, out / "derived_joints.jsonl")

    if config.fusion_spec:
        if derived is None:
            raise ConfigError("fusion_spec requires a regressor for the fine joints")
        spec = formats.load_fusion_spec(config.fusion_spec)
        fused = [fuse_skeletons(coarse, fine, spec)
                 for coarse, fine in zip(skeletons, derived)]
        formats.write_joints_jsonl(fused, timestamps, out / "fused_joints.jsonl")

    eval_report = None
    ref_skels = None
    if config.reference_states:
        ref_states = [s for s in formats.load_states_jsonl(config.reference_states)
                      if s is not None]
        ref = [forward(model, s) for s in ref_states]
        ref_skels = [s for _, s in ref]
        eval_report = evaluate(skeletons, ref_skels, meshes, [m for m, _ in ref])
    elif config.reference_joints:
        ref_skels = [skel for _, skel in formats.load_joints_jsonl(config.reference_joints)]
        eval_report = evaluate(skeletons, ref_skels)
    if eval_report is not None:
        formats.write_eval_csv(eval_report, out / "metrics.csv")
        formats.write_eval_text(eval_report, out / "metrics.txt")
        per_frame = [float(np.linalg.norm(p.joints - r.joints, axis=1).mean())
                     for p, r in zip(skeletons, ref_skels)]
        figures.plot_joint_errors(per_frame, out / "figures" / "joint_error.png")

    manifest = {
        "config_hash": config_hash(config),
        "version": __version__,
        "frames": len(frames),
        "fitted": len(fit_report.fitted),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return fit_report, eval_report
