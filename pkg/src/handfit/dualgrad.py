"""Directional derivative of the total energy via dual numbers.

Deliberately written as a second, independent forward pass (no shared code
with ``grad``) so the two gradient routes can cross-check each other.
"""

import numpy as np

from . import dual as dn
from .dual import Dual


def _skew(w):
    z = Dual(0.0, 0.0)
    return dn.stack([
        dn.stack([z, -w[2], w[1]]),
        dn.stack([w[2], z, -w[0]]),
        dn.stack([-w[1], w[0], z]),
    ])


def _rodrigues(w):
    sq = dn.dot(w, w)
    if sq.val < 1e-8:
        a = 1.0 - sq * (1.0 / 6.0) + sq * sq * (1.0 / 120.0)
        b = 0.5 - sq * (1.0 / 24.0) + sq * sq * (1.0 / 720.0)
    else:
        t = dn.sqrt(sq)
        a = dn.sin(t) / t
        b = (1.0 - dn.cos(t)) / sq
    k = _skew(w)
    return np.eye(3) + a * k + b * dn.matmul(k, k)


def _transpose(a):
    return Dual(a.val.T, a.dot.T)


def total_energy_directional(model, vec, direction, frame, mapping, weights):
    """(energy, d energy / d direction) at the packed state vector ``vec``."""
    j, b_dim = model.joint_count, model.shape_dim
    n_theta = (j - 1) * 3
    x = Dual(np.asarray(vec, dtype=float), np.asarray(direction, dtype=float))
    theta = x[:n_theta].reshape(j - 1, 3)
    beta = x[n_theta:n_theta + b_dim]
    wrist_rot = x[n_theta + b_dim:n_theta + b_dim + 3]
    trans = x[n_theta + b_dim + 3:n_theta + b_dim + 6]

    # shape blending: template + sum_b beta_b * basis_b
    shaped = dn.lift(model.template_vertices)
    for b in range(b_dim):
        shaped = shaped + beta[b] * model.shape_basis[b]
    rest = dn.matmul(model.joint_regressor, shaped)

    rot_local = [_rodrigues(wrist_rot)]
    for k in range(1, j):
        rot_local.append(_rodrigues(theta[k - 1]))

    rot_world = [None] * j
    t_world = [None] * j
    rot_world[0] = rot_local[0]
    t_world[0] = rest[0] - dn.matmul(rot_local[0], rest[0]) + trans
    for k in range(1, j):
        p = model.kinematic_tree[k]
        local_t = rest[k] - dn.matmul(rot_local[k], rest[k])
        rot_world[k] = dn.matmul(rot_world[p], rot_local[k])
        t_world[k] = dn.matmul(rot_world[p], local_t) + t_world[p]

    posed = dn.stack([dn.matmul(rot_world[k], rest[k]) + t_world[k] for k in range(j)])

    w = model.skinning_weights
    verts = None
    for k in range(j):
        contrib = dn.matmul(shaped, _transpose(rot_world[k])) + t_world[k]
        term = Dual(w[:, k, None], np.zeros((w.shape[0], 1))) * contrib
        verts = term if verts is None else verts + term

    tips = model.fingertip_vertex_ids
    skel = posed if not tips.size else dn.stack(
        [posed[k] for k in range(j)] + [verts[int(t)] for t in tips])

    obs = np.where(frame.mask)[0]
    targets = np.asarray(mapping, dtype=int)[obs]
    resid = skel[targets] - frame.keypoints[obs]
    ek = dn.dsum(resid * resid)

    er = dn.dsum(theta * theta) + dn.dsum(beta * beta)

    edges = model.rest_edges()
    d = verts[edges[:, 0]] - verts[edges[:, 1]]
    es = dn.dsum(d * d)
    if weights.double_count_edges:
        es = es * 2.0

    total = ek + weights.lambda_reg * er + weights.lambda_smooth * es
    return float(total.val), float(total.dot)
