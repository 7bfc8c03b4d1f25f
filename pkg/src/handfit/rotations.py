"""Axis-angle rotation utilities (Rodrigues form and its exact Jacobian)."""

import numpy as np

# Below this angle the closed-form Rodrigues coefficients lose precision,
# so we switch to their Taylor series (error ~ theta^6).
_SMALL_ANGLE = 1e-4


def _coeffs(sq):
    """Rodrigues coefficients a = sin(t)/t, b = (1-cos(t))/t^2 as functions of t^2."""
    if sq < _SMALL_ANGLE ** 2:
        a = 1.0 - sq / 6.0 + sq * sq / 120.0
        b = 0.5 - sq / 24.0 + sq * sq / 720.0
    else:
        t = np.sqrt(sq)
        a = np.sin(t) / t
        b = (1.0 - np.cos(t)) / sq
    return a, b


def _coeff_derivs(sq):
    """Derivatives of the Rodrigues coefficients w.r.t. t^2."""
    if sq < _SMALL_ANGLE ** 2:
        da = -1.0 / 6.0 + sq / 60.0 - sq * sq / 1680.0
        db = -1.0 / 24.0 + sq / 360.0 - sq * sq / 13440.0
    else:
        t = np.sqrt(sq)
        s, c = np.sin(t), np.cos(t)
        da = (t * c - s) / (2.0 * t ** 3)
        db = (t * s / 2.0 - (1.0 - c)) / (sq * sq)
    return da, db


def skew(w):
    """Cross-product matrix [w]x such that skew(w) @ v == cross(w, v)."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


_E = [skew(e) for e in np.eye(3)]


def rodrigues(w):
    """Rotation matrix for an axis-angle 3-vector."""
    w = np.asarray(w, dtype=float)
    sq = float(w @ w)
    a, b = _coeffs(sq)
    k = skew(w)
    return np.eye(3) + a * k + b * (k @ k)


def rodrigues_jacobian(w):
    """dR/dw as a (3, 3, 3) array indexed [component, row, col]."""
    w = np.asarray(w, dtype=float)
    sq = float(w @ w)
    a, b = _coeffs(sq)
    da, db = _coeff_derivs(sq)
    k = skew(w)
    k2 = k @ k
    jac = np.empty((3, 3, 3))
    for i in range(3):
        ei = _E[i]
        jac[i] = (2.0 * w[i]) * (da * k + db * k2) + a * ei + b * (ei @ k + k @ ei)
    return jac


def rodrigues_backward(w, grad_r):
    """Pull a gradient w.r.t. the rotation matrix back to the axis-angle vector."""
    jac = rodrigues_jacobian(w)
    return np.array([np.sum(jac[i] * grad_r) for i in range(3)])


def _batch_coeffs(sq):
    small = sq < _SMALL_ANGLE ** 2
    safe = np.where(small, 1.0, sq)
    t = np.sqrt(safe)
    a = np.where(small, 1.0 - sq / 6.0 + sq * sq / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - sq / 24.0 + sq * sq / 720.0, (1.0 - np.cos(t)) / safe)
    da = np.where(small, -1.0 / 6.0 + sq / 60.0 - sq * sq / 1680.0,
                  (t * np.cos(t) - np.sin(t)) / (2.0 * t ** 3))
    db = np.where(small, -1.0 / 24.0 + sq / 360.0 - sq * sq / 13440.0,
                  (t * np.sin(t) / 2.0 - (1.0 - np.cos(t))) / (safe * safe))
    return a, b, da, db


def _batch_skew(w):
    n = w.shape[0]
    k = np.zeros((n, 3, 3))
    k[:, 0, 1] = -w[:, 2]
    k[:, 0, 2] = w[:, 1]
    k[:, 1, 0] = w[:, 2]
    k[:, 1, 2] = -w[:, 0]
    k[:, 2, 0] = -w[:, 1]
    k[:, 2, 1] = w[:, 0]
    return k


def batch_rodrigues(w):
    """Rotation matrices (n, 3, 3) for a stack of axis-angle vectors (n, 3)."""
    w = np.asarray(w, dtype=float)
    sq = np.sum(w * w, axis=1)
    a, b, _, _ = _batch_coeffs(sq)
    k = _batch_skew(w)
    k2 = k @ k
    return np.eye(3) + a[:, None, None] * k + b[:, None, None] * k2


_E_STACK = np.stack(_E)  # (3, 3, 3)


def batch_rodrigues_backward(w, grad_r):
    """Batched pullback of rotation-matrix gradients to axis-angle vectors."""
    w = np.asarray(w, dtype=float)
    sq = np.sum(w * w, axis=1)
    a, b, da, db = _batch_coeffs(sq)
    k = _batch_skew(w)
    k2 = k @ k
    sk = np.einsum("nab,nab->n", k, grad_r)
    sk2 = np.einsum("nab,nab->n", k2, grad_r)
    term1 = 2.0 * w * (da * sk + db * sk2)[:, None]
    term2 = a[:, None] * np.einsum("iab,nab->ni", _E_STACK, grad_r)
    cross = np.einsum("iab,nbc->niac", _E_STACK, k) + \
        np.einsum("nab,ibc->niac", k, _E_STACK)
    term3 = b[:, None] * np.einsum("niab,nab->ni", cross, grad_r)
    return term1 + term2 + term3


def geodesic_angle(r_a, r_b):
    """Angle in radians between two rotation matrices."""
    c = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def axis_angle_from_matrix(r):
    """Axis-angle 3-vector for a rotation matrix (angle in [0, pi])."""
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(c))
    if angle < 1e-10:
        return np.zeros(3)
    if angle > np.pi - 1e-6:
        # near 180 deg: axis from the symmetric part
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        # fix signs from off-diagonals
        i = int(np.argmax(axis))
        if axis[i] > 0:
            for j in range(3):
                if j != i and m[i, j] < 0:
                    axis[j] = -axis[j]
        axis /= np.linalg.norm(axis)
        return axis * angle
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    axis /= 2.0 * np.sin(angle)
    return axis * angle


def random_rotation(rng):
    """Uniform random rotation matrix from a random unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
