"""Per-joint / per-vertex position error statistics between two pose sequences.

Two residual conventions are reported side by side:
  * signed: mean of raw per-coordinate differences (can be negative; this is
    the convention that can produce negative table entries),
  * euclid: mean Euclidean distance per point (standard MPJPE-style error).
Standard deviations are over the pooled per-coordinate residuals.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalReport:
    pj_signed: float
    pv_signed: float
    pj_euclid: float
    pv_euclid: float
    pj_std: float
    pv_std: float
    joint_samples: int
    vertex_samples: int

    def as_dict(self):
        return {
            "pj_signed": self.pj_signed, "pv_signed": self.pv_signed,
            "pj_euclid": self.pj_euclid, "pv_euclid": self.pv_euclid,
            "pj_std": self.pj_std, "pv_std": self.pv_std,
            "joint_samples": self.joint_samples,
            "vertex_samples": self.vertex_samples,
        }


def _pooled(pred_list, ref_list, what):
    if len(pred_list) != len(ref_list):
        raise ValueError(
            f"{what}: {len(pred_list)} predicted frames vs {len(ref_list)} reference frames"
        )
    residuals = []
    for i, (p, r) in enumerate(zip(pred_list, ref_list)):
        p = np.asarray(p, dtype=float)
        r = np.asarray(r, dtype=float)
        if p.shape != r.shape:
            raise ValueError(f"{what}: frame {i} shape mismatch {p.shape} vs {r.shape}")
        residuals.append(p - r)
    stacked = np.concatenate(residuals, axis=0) if residuals else np.zeros((0, 3))
    signed = float(stacked.mean()) if stacked.size else 0.0
    euclid = float(np.linalg.norm(stacked, axis=1).mean()) if stacked.size else 0.0
    std = float(stacked.std()) if stacked.size else 0.0
    return signed, euclid, std, stacked.shape[0]


def evaluate(pred_skeletons, ref_skeletons, pred_meshes=None, ref_meshes=None):
    """Pooled PJ/PV statistics over per-frame skeletons and (optionally) meshes."""
    pj_signed, pj_euclid, pj_std, nj = _pooled(
        [s.joints for s in pred_skeletons],
        [s.joints for s in ref_skeletons], "joints")
    if pred_meshes is not None and ref_meshes is not None:
        pv_signed, pv_euclid, pv_std, nv = _pooled(
            [m.vertices for m in pred_meshes],
            [m.vertices for m in ref_meshes], "vertices")
    else:
        pv_signed = pv_euclid = pv_std = 0.0
        nv = 0
    return EvalReport(pj_signed, pv_signed, pj_euclid, pv_euclid,
                      pj_std, pv_std, nj, nv)
