"""On-disk formats: keypoint JSON-Lines, OBJ meshes, CSV traces, spec files.

All formats are documented byte-exactly in docs/formats.md; every writer here
round-trips through its parser.
"""

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .energy import KeypointFrame
from .metrics import EvalReport
from .model import Mesh
from .unified import FusedSkeletonSpec


class KeypointFormatError(ValueError):
    """Malformed keypoint file; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def load_conventions(path=None):
    """Keypoint convention table: name -> {count, unit_scale_to_mm, joint_map}."""
    if path is None:
        with resources.files("handfit.data").joinpath("conventions.json").open() as fh:
            return json.load(fh)
    with open(path) as fh:
        return json.load(fh)


def parse_keypoints(path, conventions=None):
    """Read a JSON-Lines keypoint file into KeypointFrames, converting units to mm."""
    conventions = conventions or load_conventions()
    frames = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise KeypointFormatError(f"bad JSON ({exc.msg})", line=lineno) from exc
            for key in ("t", "pts", "convention"):
                if key not in rec:
                    raise KeypointFormatError(f"missing field {key!r}", line=lineno)
            tag = rec["convention"]
            conv = conventions.get(tag)
            if conv is None:
                raise KeypointFormatError(f"unknown convention tag {tag!r}", line=lineno)
            pts = np.asarray(rec["pts"], dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 3:
                raise KeypointFormatError("pts must be a list of [x, y, z]", line=lineno)
            if pts.shape[0] != conv["count"]:
                raise KeypointFormatError(
                    f"convention {tag!r} expects {conv['count']} points, got {pts.shape[0]}",
                    line=lineno)
            mask = np.asarray(rec.get("mask", [True] * pts.shape[0]), dtype=bool)
            if mask.shape[0] != pts.shape[0]:
                raise KeypointFormatError("mask length must match pts", line=lineno)
            if not np.all(np.isfinite(pts[mask])):
                raise KeypointFormatError("non-finite coordinate", line=lineno)
            pts = pts * conv.get("unit_scale_to_mm", 1.0)
            frames.append(KeypointFrame(float(rec["t"]), pts, mask, tag))
    return frames


def write_keypoints(frames, path):
    """Inverse of parse_keypoints, assuming mm units."""
    with open(path, "w") as fh:
        for frame in frames:
            rec = {
                "t": frame.timestamp,
                "pts": [[float(c) for c in p] for p in frame.keypoints],
                "mask": [bool(m) for m in frame.mask],
                "convention": frame.convention,
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def mapping_for(convention_tag, conventions=None):
    conventions = conventions or load_conventions()
    conv = conventions.get(convention_tag)
    if conv is None:
        raise KeyError(f"unknown convention tag {convention_tag!r}")
    return np.asarray(conv["joint_map"], dtype=int)


def export_obj(mesh, path):
    """Text OBJ: `v x y z` lines (mm, 6 decimals) then 1-based `f` lines."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_obj(path):
    vertices = []
    faces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: short vertex line")
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                faces.append(idx)
    return Mesh(np.asarray(vertices), np.asarray(faces, dtype=int).reshape(-1, 3))


def write_trace_csv(report, path):
    """Per-iteration energy breakdown of every fitted frame."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "iteration", "e_key", "e_reg", "e_smooth", "total"])
        for fidx, frame in enumerate(report.frames):
            for it, bd in enumerate(frame.fine_trace):
                writer.writerow([fidx, it, f"{bd.e_key:.9g}", f"{bd.e_reg:.9g}",
                                 f"{bd.e_smooth:.9g}", f"{bd.total:.9g}"])


def write_eval_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        keys = list(report.as_dict())
        writer.writerow(keys)
        writer.writerow([f"{report.as_dict()[k]:.9g}" if isinstance(report.as_dict()[k], float)
                         else report.as_dict()[k] for k in keys])


def write_eval_text(report, path):
    d = report.as_dict()
    lines = [
        "position error report (mm)",
        f"  PJ signed  {d['pj_signed']: .6f}    PJ euclid  {d['pj_euclid']: .6f}    PJ std  {d['pj_std']: .6f}",
        f"  PV signed  {d['pv_signed']: .6f}    PV euclid  {d['pv_euclid']: .6f}    PV std  {d['pv_std']: .6f}",
        f"  samples: {d['joint_samples']} joints, {d['vertex_samples']} vertices",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_fusion_spec(path):
    """CSV of (name, source, index) rows with a fixed header."""
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["name", "source", "index"]:
            raise ValueError(f"{path}: expected header name,source,index, got {header}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: bad row {row}")
            entries.append((row[0], row[1], int(row[2])))
    return FusedSkeletonSpec(entries)


def write_fusion_spec(spec, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "source", "index"])
        for name, source, index in spec.entries:
            writer.writerow([name, source, index])


def write_states_jsonl(report, path):
    with open(path, "w") as fh:
        for fidx, frame in enumerate(report.frames):
            if frame.failed:
                rec = {"frame": fidx, "failed": True, "error": frame.error}
            else:
                s = frame.state
                rec = {
                    "frame": fidx,
                    "failed": False,
                    "theta": s.theta.tolist(),
                    "beta": s.beta.tolist(),
                    "wrist_rotation": s.wrist_rotation.tolist(),
                    "wrist_translation": s.wrist_translation.tolist(),
                    "energy": frame.breakdown.as_dict(),
                    "coarse_iterations": frame.coarse_iterations,
                    "fine_iterations": frame.fine_iterations,
                }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_states_jsonl(path):
    from .model import HandPoseState

    states = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("failed"):
                states.append(None)
            else:
                states.append(HandPoseState(
                    np.asarray(rec["theta"]), np.asarray(rec["beta"]),
                    np.asarray(rec["wrist_rotation"]),
                    np.asarray(rec["wrist_translation"])))
    return states


def write_joints_jsonl(skeletons, timestamps, path):
    with open(path, "w") as fh:
        for t, skel in zip(timestamps, skeletons):
            rec = {
                "t": t,
                "joints": [[float(c) for c in p] for p in skel.joints],
                "names": list(skel.names),
                "convention": skel.convention,
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_joints_jsonl(path):
    from .model import Skeleton

    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append((rec["t"], Skeleton(np.asarray(rec["joints"]),
                                           rec["names"], rec.get("convention", ""))))
    return out
