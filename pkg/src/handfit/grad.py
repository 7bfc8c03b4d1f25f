"""Hand-derived reverse-mode gradient of the total energy through the skinning chain.

This is the fast gradient path used by the optimizers. An independently written
forward-mode dual-number path lives in ``dualgrad`` and is used as a
cross-check; finite differences back both in the tests.
"""

from dataclasses import dataclass

import numpy as np

from .energy import EnergyBreakdown, e_reg
from .model import shaped_template
from .rotations import batch_rodrigues, batch_rodrigues_backward


@dataclass
class StateGrad:
    """Gradient of a scalar w.r.t. every HandPoseState field."""

    theta: np.ndarray
    beta: np.ndarray
    wrist_rotation: np.ndarray
    wrist_translation: np.ndarray

    def to_vector(self):
        return np.concatenate([
            self.theta.ravel(), self.beta,
            self.wrist_rotation, self.wrist_translation,
        ])


def pack_state(state):
    return np.concatenate([
        state.theta.ravel(), state.beta,
        state.wrist_rotation, state.wrist_translation,
    ])


def unpack_state(model, vec):
    from .model import HandPoseState

    j, b = model.joint_count, model.shape_dim
    n_theta = (j - 1) * 3
    theta = vec[:n_theta].reshape(j - 1, 3)
    beta = vec[n_theta:n_theta + b]
    rw = vec[n_theta + b:n_theta + b + 3]
    trans = vec[n_theta + b + 3:n_theta + b + 6]
    return HandPoseState(theta, beta, rw, trans)


def param_blocks(model):
    """Index arrays for the two fine-stage blocks of the packed state vector."""
    j, b = model.joint_count, model.shape_dim
    n_theta = (j - 1) * 3
    pose_shape = np.arange(n_theta + b)
    rotation = np.arange(n_theta + b, n_theta + b + 3)
    translation = np.arange(n_theta + b + 3, n_theta + b + 6)
    return pose_shape, rotation, translation


def total_energy_and_grad(model, state, frame, mapping, weights):
    """Total energy breakdown plus its gradient w.r.t. the pose state.

    One forward pass with cached intermediates followed by one reverse sweep
    through LBS, the kinematic chain, Rodrigues and the shape blendshapes.
    """
    j = model.joint_count
    mapping = np.asarray(mapping, dtype=int)

    # ---- forward, caching intermediates ----
    shaped = shaped_template(model, state.beta)
    rest = model.joint_regressor @ shaped
    axis_angles = np.vstack([state.wrist_rotation[None], state.theta])
    r_local = batch_rodrigues(axis_angles)
    r_world = np.empty((j, 3, 3))
    t_world = np.empty((j, 3))
    local_t = np.empty((j, 3))
    r_world[0] = r_local[0]
    local_t[0] = rest[0] - r_local[0] @ rest[0]
    t_world[0] = local_t[0] + state.wrist_translation
    parents = model.kinematic_tree
    for k in range(1, j):
        p = parents[k]
        local_t[k] = rest[k] - r_local[k] @ rest[k]
        r_world[k] = r_world[p] @ r_local[k]
        t_world[k] = r_world[p] @ local_t[k] + t_world[p]

    posed_joints = np.matmul(r_world, rest[:, :, None])[:, :, 0] + t_world
    w = model.skinning_weights
    transformed = np.matmul(shaped[None], r_world.transpose(0, 2, 1))  # (J, V, 3)
    wt = w.T[:, :, None]
    vertices = np.sum(wt * transformed, axis=0) + w @ t_world
    tips = model.fingertip_vertex_ids
    skel = np.vstack([posed_joints, vertices[tips]]) if tips.size else posed_joints

    # ---- energies ----
    obs = np.where(frame.mask)[0]
    if obs.size == 0:
        raise ValueError("no masked-in keypoints")
    targets = mapping[obs]
    resid = skel[targets] - frame.keypoints[obs]
    ek = float(np.sum(resid * resid))
    er = e_reg(state)
    edges = _edges(model)
    d = vertices[edges[:, 0]] - vertices[edges[:, 1]]
    es_single = float(np.sum(d * d))
    es = 2.0 * es_single if weights.double_count_edges else es_single
    total = ek + weights.lambda_reg * er + weights.lambda_smooth * es
    breakdown = EnergyBreakdown(ek, er, es, total)

    # ---- reverse sweep ----
    g_skel = np.zeros_like(skel)
    np.add.at(g_skel, targets, 2.0 * resid)
    g_pj = g_skel[:j].copy()
    g_v = np.zeros_like(vertices)
    if tips.size:
        np.add.at(g_v, tips, g_skel[j:])

    edge_factor = 4.0 if weights.double_count_edges else 2.0
    coeff = weights.lambda_smooth * edge_factor
    if coeff != 0.0 and edges.size:
        np.add.at(g_v, edges[:, 0], coeff * d)
        np.add.at(g_v, edges[:, 1], -coeff * d)

    # LBS backward
    weighted_gv = wt * g_v[None]                       # (J, V, 3)
    g_rw = np.matmul(weighted_gv.transpose(0, 2, 1), shaped)
    g_tw = w.T @ g_v
    g_shaped = np.sum(np.matmul(weighted_gv, r_world), axis=0)

    # posed joints backward
    g_rw += g_pj[:, :, None] * rest[:, None, :]
    g_tw += g_pj
    g_rest = np.matmul(r_world.transpose(0, 2, 1), g_pj[:, :, None])[:, :, 0]

    # kinematic chain backward, children before parents
    g_rlocal = np.zeros((j, 3, 3))
    eye = np.eye(3)
    for k in range(j - 1, 0, -1):
        p = parents[k]
        g_rw[p] += g_rw[k] @ r_local[k].T + np.outer(g_tw[k], local_t[k])
        g_rlocal[k] += r_world[p].T @ g_rw[k]
        g_lt = r_world[p].T @ g_tw[k]
        g_tw[p] += g_tw[k]
        g_rest[k] += (eye - r_local[k]).T @ g_lt
        g_rlocal[k] -= np.outer(g_lt, rest[k])
    g_rlocal[0] = g_rw[0] - np.outer(g_tw[0], rest[0])
    g_rest[0] += (eye - r_local[0]).T @ g_tw[0]
    g_trans = g_tw[0].copy()

    g_axis = batch_rodrigues_backward(axis_angles, g_rlocal)
    g_wrist_rot = g_axis[0]
    g_theta = g_axis[1:].copy()

    # rest joints and shape backward
    g_shaped += model.joint_regressor.T @ g_rest
    g_beta = np.tensordot(model.shape_basis, g_shaped, axes=([1, 2], [0, 1]))

    # regularizer
    g_theta += 2.0 * weights.lambda_reg * state.theta
    g_beta += 2.0 * weights.lambda_reg * state.beta

    return breakdown, StateGrad(g_theta, g_beta, g_wrist_rot, g_trans)


def _edges(model):
    # derived-value cache; the model itself stays logically immutable
    cached = getattr(model, "_edge_cache", None)
    if cached is None:
        cached = model.rest_edges()
        model._edge_cache = cached
    return cached
