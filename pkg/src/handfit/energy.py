"""Keypoint, regularization and smoothness energies plus their weighted total.

All terms are in mm^2. The smoothness sum runs over directed neighbor pairs,
so each undirected edge counts twice by default; set
``EnergyWeights.double_count_edges = False`` for single counting.
"""

from dataclasses import dataclass, field

import numpy as np

from .model import forward


@dataclass
class KeypointFrame:
    """One timestamped frame of observed 3D keypoints in millimeters."""

    timestamp: float
    keypoints: np.ndarray       # (N, 3)
    mask: np.ndarray = None     # (N,) bool, True = observed
    convention: str = ""

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float)
        if self.keypoints.ndim != 2 or self.keypoints.shape[1] != 3 or self.keypoints.shape[0] < 1:
            raise ValueError(f"keypoints must be (N, 3) with N >= 1, got {self.keypoints.shape}")
        if self.mask is None:
            self.mask = np.ones(self.keypoints.shape[0], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape[0] != self.keypoints.shape[0]:
            raise ValueError("mask length must match keypoint count")
        if not np.all(np.isfinite(self.keypoints[self.mask])):
            raise ValueError("masked-in keypoints must be finite")


@dataclass
class EnergyWeights:
    lambda_reg: float = 1e-3
    lambda_smooth: float = 1e-4
    double_count_edges: bool = True

    def __post_init__(self):
        for name in ("lambda_reg", "lambda_smooth"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {val}")


@dataclass
class EnergyBreakdown:
    e_key: float
    e_reg: float
    e_smooth: float
    total: float

    def as_dict(self):
        return {"e_key": self.e_key, "e_reg": self.e_reg,
                "e_smooth": self.e_smooth, "total": self.total}


def e_key(frame, skeleton, mapping):
    """Sum of squared distances between observed keypoints and mapped joints."""
    mapping = np.asarray(mapping, dtype=int)
    idx = np.where(frame.mask)[0]
    if idx.size == 0:
        raise ValueError("no masked-in keypoints")
    if mapping.shape[0] != frame.keypoints.shape[0]:
        raise ValueError("mapping length must match keypoint count")
    joints = skeleton.joints
    targets = mapping[idx]
    if np.any(targets < 0) or np.any(targets >= joints.shape[0]):
        raise ValueError("mapping index out of skeleton range")
    diff = frame.keypoints[idx] - joints[targets]
    return float(np.sum(diff * diff))


def e_reg(state):
    """Squared norms of shape and articulation; wrist rotation/translation excluded."""
    return float(state.beta @ state.beta + np.sum(state.theta * state.theta))


def e_smooth(mesh, double_count=True):
    """Sum of squared neighbor vertex distances over the mesh edge graph."""
    if mesh.edges.size == 0:
        return 0.0
    d = mesh.vertices[mesh.edges[:, 0]] - mesh.vertices[mesh.edges[:, 1]]
    total = float(np.sum(d * d))
    return 2.0 * total if double_count else total


def total_energy(model, state, frame, mapping, weights):
    """Run the forward model once and combine the three terms (Eq. 3 style total)."""
    mesh, skeleton = forward(model, state)
    ek = e_key(frame, skeleton, mapping)
    er = e_reg(state)
    es = e_smooth(mesh, weights.double_count_edges)
    total = ek + weights.lambda_reg * er + weights.lambda_smooth * es
    return EnergyBreakdown(ek, er, es, total)
