"""Command line interface."""

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, formats
from .container import load_model, load_regressor, save_model, save_regressor
from .metrics import evaluate
from .model import HandPoseState, forward, synth_model
from .pipeline import ConfigError, load_run_config, run_config_from_dict, run_pipeline
from .unified import AlignmentMap, build_training_set, fuse_skeletons, train_mlp, TrainConfig, predict_joints


@click.group()
@click.version_option(__version__)
@click.option("--verbose", is_flag=True, default=False, help="Print progress.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Global seed for commands that sample.")
@click.pass_context
def main(ctx, verbose, seed):
    """Fit skinned hand models to 3D keypoints and derive unified joints."""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    ctx.obj["seed"] = seed


@main.command("synth-model")
@click.option("--vertices", type=int, default=200, show_default=True)
@click.option("--joints", type=int, default=16, show_default=True)
@click.option("--shape-dim", type=int, default=10, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
def synth_model_cmd(ctx, vertices, joints, shape_dim, out):
    """Generate a deterministic synthetic stand-in model."""
    model = synth_model(ctx.obj["seed"], vertices, joints, shape_dim)
    save_model(model, out)
    click.echo(f"wrote {model.name} ({vertices} vertices, {joints} joints) to {out}")


@main.command("fit")
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--input", "input_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path())
@click.option("--export-obj", is_flag=True, default=False,
              help="Write one OBJ mesh per fitted frame.")
@click.pass_context
def fit_cmd(ctx, model_path, input_path, config_path, out_dir, export_obj):
    """Fit a keypoint sequence; optionally derive/fuse/evaluate via the config."""
    overrides = {}
    if model_path:
        overrides["model"] = model_path
    if input_path:
        overrides["input"] = input_path
    if out_dir:
        overrides["out_dir"] = out_dir
    if export_obj:
        overrides["export_meshes"] = True
    try:
        if config_path:
            config = load_run_config(config_path, overrides)
        else:
            config = run_config_from_dict(overrides)
        report, eval_report = run_pipeline(config, verbose=ctx.obj["verbose"])
    except (ConfigError, ValueError) as exc:
        raise click.ClickException(str(exc))
    failed = sum(1 for f in report.frames if f.failed)
    click.echo(f"fitted {len(report.fitted)}/{len(report.frames)} frames "
               f"in {report.wall_time:.1f}s ({failed} failed)")
    if eval_report is not None:
        click.echo(f"PJ {eval_report.pj_euclid:.4f} mm, PV {eval_report.pv_euclid:.4f} mm")
    sys.exit(1 if failed == len(report.frames) else 0)


@main.command("train-regressor")
@click.option("--coarse", type=click.Path(exists=True), required=True,
              help="Coarse-convention model container.")
@click.option("--fine", type=click.Path(exists=True), required=True,
              help="Fine-convention model container.")
@click.option("--samples", type=int, default=5000, show_default=True)
@click.option("--hidden", type=str, default="256,256", show_default=True)
@click.option("--epochs", type=int, default=80, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
def train_regressor_cmd(ctx, coarse, fine, samples, hidden, epochs, batch_size, lr, out):
    """Build a synthetic training set and train the mesh-to-joints MLP."""
    seed = ctx.obj["seed"]
    coarse_model = load_model(coarse)
    fine_model = load_model(fine)
    dataset = build_training_set(coarse_model, fine_model,
                                 AlignmentMap.identity(fine_model.name, coarse_model.name),
                                 samples, seed)
    sizes = tuple(int(s) for s in hidden.split(",") if s)
    regressor = train_mlp(dataset, sizes,
                          TrainConfig(lr=lr, epochs=epochs, batch_size=batch_size, seed=seed))
    save_regressor(regressor, out)
    err = regressor.metadata.get("val_joint_error_mm", float("nan"))
    click.echo(f"trained {sizes} MLP on {samples} samples; "
               f"held-out joint error {err:.4f} mm; wrote {out}")


@main.command("derive-joints")
@click.option("--regressor", type=click.Path(exists=True), required=True)
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True,
              help="An OBJ file or a directory of OBJ files.")
@click.option("--out", type=click.Path(), required=True)
def derive_joints_cmd(regressor, mesh_path, out):
    """Regress fine-convention joints from posed coarse meshes."""
    reg = load_regressor(regressor)
    path = Path(mesh_path)
    files = sorted(path.glob("*.obj")) if path.is_dir() else [path]
    skeletons, timestamps = [], []
    for i, f in enumerate(files):
        mesh = formats.parse_obj(f)
        skeletons.append(predict_joints(reg, mesh))
        timestamps.append(float(i))
    formats.write_joints_jsonl(skeletons, timestamps, out)
    click.echo(f"derived joints for {len(files)} mesh(es) into {out}")


@main.command("fuse")
@click.option("--coarse-joints", type=click.Path(exists=True), required=True)
@click.option("--fine-joints", type=click.Path(exists=True), required=True)
@click.option("--spec", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
def fuse_cmd(coarse_joints, fine_joints, spec, out):
    """Fuse coarse and fine joint files per a fusion spec CSV."""
    spec_obj = formats.load_fusion_spec(spec)
    coarse = formats.load_joints_jsonl(coarse_joints)
    fine = formats.load_joints_jsonl(fine_joints)
    if len(coarse) != len(fine):
        raise click.ClickException(
            f"frame count mismatch: {len(coarse)} coarse vs {len(fine)} fine")
    fused, timestamps = [], []
    for (t, c), (_, f) in zip(coarse, fine):
        fused.append(fuse_skeletons(c, f, spec_obj))
        timestamps.append(t)
    formats.write_joints_jsonl(fused, timestamps, out)
    click.echo(f"fused {len(fused)} frame(s) into {out}")


@main.command("eval")
@click.option("--pred", type=click.Path(exists=True), required=True,
              help="Predicted joints JSONL.")
@click.option("--ref", type=click.Path(exists=True), required=True,
              help="Reference joints JSONL.")
@click.option("--out", type=click.Path(), required=True,
              help="Output CSV path; a .txt report and a figure land beside it.")
def eval_cmd(pred, ref, out):
    """Position-error metrics between predicted and reference joints."""
    pred_sk = [s for _, s in formats.load_joints_jsonl(pred)]
    ref_sk = [s for _, s in formats.load_joints_jsonl(ref)]
    try:
        report = evaluate(pred_sk, ref_sk)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    out = Path(out)
    formats.write_eval_csv(report, out)
    formats.write_eval_text(report, out.with_suffix(".txt"))
    from .report import plot_joint_errors
    per_frame = [float(np.linalg.norm(p.joints - r.joints, axis=1).mean())
                 for p, r in zip(pred_sk, ref_sk)]
    plot_joint_errors(per_frame, out.with_suffix(".png"))
    click.echo(f"PJ signed {report.pj_signed:.6f} mm, euclid {report.pj_euclid:.6f} mm, "
               f"std {report.pj_std:.6f} mm")


@main.command("export-mesh")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--state", "state_path", type=click.Path(exists=True),
              help="States JSONL; default is the rest pose.")
@click.option("--frame", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def export_mesh_cmd(model_path, state_path, frame, out):
    """Pose the model and write the mesh as OBJ."""
    model = load_model(model_path)
    if state_path:
        states = formats.load_states_jsonl(state_path)
        if frame >= len(states) or states[frame] is None:
            raise click.ClickException(f"no state for frame {frame} in {state_path}")
        state = states[frame]
    else:
        state = HandPoseState.zero(model.joint_count, model.shape_dim)
    mesh, _ = forward(model, state)
    formats.export_obj(mesh, out)
    click.echo(f"wrote {mesh.vertices.shape[0]} vertices to {out}")


if __name__ == "__main__":
    main()
