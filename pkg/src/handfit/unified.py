"""Unified joints: model alignment, a mesh-to-joints MLP regressor, skeleton fusion."""

from dataclasses import dataclass, field

import numpy as np

from .model import HandPoseState, Skeleton, forward
from .optim import adam_init, adam_step


@dataclass
class AlignmentMap:
    """Similarity transform y = scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray   # (3, 3), proper orthonormal
    translation: np.ndarray  # (3,), mm
    source: str = ""
    target: str = ""
    residual_rms: float = 0.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if np.linalg.norm(self.rotation @ self.rotation.T - np.eye(3)) > 1e-6 \
                or np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must be orthonormal with determinant +1")

    def apply(self, points):
        return self.scale * np.asarray(points, dtype=float) @ self.rotation.T \
            + self.translation

    def inverse(self):
        inv_r = self.rotation.T
        return AlignmentMap(
            scale=1.0 / self.scale,
            rotation=inv_r,
            translation=-inv_r @ self.translation / self.scale,
            source=self.target,
            target=self.source,
            residual_rms=self.residual_rms,
        )

    @classmethod
    def identity(cls, source="", target=""):
        return cls(1.0, np.eye(3), np.zeros(3), source, target)


def align_models(source_mesh, target_mesh, correspondences,
                 source="", target=""):
    """Closed-form similarity Procrustes over corresponding vertex pairs.

    Minimizes sum ||s R x_i + t - y_i||^2 (Umeyama); needs at least three
    non-collinear pairs.
    """
    pairs = np.asarray(correspondences, dtype=int)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 3:
        raise ValueError("need at least 3 correspondence pairs of (source, target) indices")
    x = source_mesh.vertices[pairs[:, 0]]
    y = target_mesh.vertices[pairs[:, 1]]
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    cov = yc.T @ xc / len(pairs)
    u, s, vt = np.linalg.svd(cov)
    if s[1] < 1e-9 * max(s[0], 1e-12):
        raise ValueError("correspondences are collinear or degenerate")
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rotation = u @ np.diag(d) @ vt
    var_x = np.sum(xc * xc) / len(pairs)
    scale = float(np.sum(s * d) / var_x)
    if scale <= 0:
        raise ValueError("degenerate correspondences produced non-positive scale")
    translation = my - scale * rotation @ mx
    resid = scale * x @ rotation.T + translation - y
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return AlignmentMap(scale, rotation, translation, source, target, residual_rms=rms)


def default_state_transfer(coarse_model, fine_model):
    """Map a coarse pose state onto the fine model's parameter layout.

    Non-root fine joints inherit the axis-angle of the coarse joint at the same
    chain position (clamped to the coarse chain length); shared leading shape
    coefficients carry over.
    """
    from .model import _chain_layout

    coarse_chains = _chain_layout(coarse_model.joint_count)
    fine_chains = _chain_layout(fine_model.joint_count)
    source_of = np.zeros(fine_model.joint_count, dtype=int)
    for chain_c, chain_f in zip(coarse_chains, fine_chains):
        for pos, jid in enumerate(chain_f):
            source_of[jid] = chain_c[min(pos, len(chain_c) - 1)]
    shared_b = min(coarse_model.shape_dim, fine_model.shape_dim)

    def transfer(state):
        theta_f = np.zeros((fine_model.joint_count - 1, 3))
        for jid in range(1, fine_model.joint_count):
            src = source_of[jid]
            if src >= 1:
                theta_f[jid - 1] = state.theta[src - 1]
        beta_f = np.zeros(fine_model.shape_dim)
        beta_f[:shared_b] = state.beta[:shared_b]
        return HandPoseState(theta_f, beta_f,
                             state.wrist_rotation.copy(),
                             state.wrist_translation.copy())

    return transfer


@dataclass
class JointDataset:
    """Paired (posed coarse mesh vertices, aligned fine joints) samples."""

    inputs: np.ndarray    # (n, V, 3)
    targets: np.ndarray   # (n, J_fine, 3)
    states: list          # sampled coarse HandPoseState per sample
    seed: int
    source: str = ""
    target_convention: str = ""

    def __len__(self):
        return self.inputs.shape[0]


def build_training_set(coarse_model, fine_model, alignment, n_samples, seed,
                       theta_range=0.6, state_transfer=None):
    """Sample poses, run both forward models, align fine joints into the coarse frame."""
    if theta_range <= 0:
        raise ValueError(f"theta_range must be positive, got {theta_range}")
    rng = np.random.default_rng(seed)
    transfer = state_transfer or default_state_transfer(coarse_model, fine_model)
    inputs = np.empty((n_samples, coarse_model.vertex_count, 3))
    targets = np.empty((n_samples, fine_model.joint_count, 3))
    states = []
    for i in range(n_samples):
        theta = rng.uniform(-theta_range, theta_range,
                            size=(coarse_model.joint_count - 1, 3))
        beta = rng.normal(size=coarse_model.shape_dim)
        state = HandPoseState(theta, beta, np.zeros(3), np.zeros(3))
        mesh, _ = forward(coarse_model, state)
        _, fine_skel = forward(fine_model, transfer(state))
        inputs[i] = mesh.vertices
        targets[i] = alignment.apply(fine_skel.joints[:fine_model.joint_count])
        states.append(state)
    return JointDataset(inputs, targets, states, seed,
                        source=coarse_model.name, target_convention=fine_model.name)


def _normalize(batch_verts):
    """Center at the centroid and scale by the RMS radius, per sample."""
    center = batch_verts.mean(axis=1, keepdims=True)
    centered = batch_verts - center
    scale = np.sqrt(np.mean(np.sum(centered ** 2, axis=2), axis=1))
    scale = np.maximum(scale, 1e-9)[:, None, None]
    return centered / scale, center, scale


@dataclass
class MlpRegressor:
    """Fully connected ReLU network mapping flattened mesh vertices to joints.

    Inputs and outputs are expressed in a per-sample frame (centroid-centered,
    RMS-radius scaled) so the learned map is translation and scale invariant.
    An optional linear skip path runs in parallel with the ReLU stack; the
    network output is then stack(x) + x @ skip, which lets the hidden layers
    learn a residual correction on top of a linear map.
    """

    weights: list           # (in, out) matrices
    biases: list            # (out,) vectors
    skip: np.ndarray = None  # optional (in, out) linear bypass
    activation: str = "relu"
    target_convention: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError(
                    f"layer {i} output dim {self.weights[i].shape[1]} != "
                    f"layer {i + 1} input dim {self.weights[i + 1].shape[0]}"
                )
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias length does not match layer width")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite regressor weights")
        if self.skip is not None:
            expected = (self.weights[0].shape[0], self.weights[-1].shape[1])
            if self.skip.shape != expected:
                raise ValueError(
                    f"skip shape {self.skip.shape} does not match {expected}"
                )
            if not np.all(np.isfinite(self.skip)):
                raise ValueError("non-finite regressor weights")

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    def forward(self, x):
        """Batched forward pass in the normalized frame; x is (n, input_dim)."""
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        if self.skip is not None:
            h = h + x @ self.skip
        return h

    def lipschitz_bound(self):
        """Product of layer spectral norms; an upper bound on output sensitivity."""
        bound = 1.0
        for w in self.weights:
            bound *= float(np.linalg.svd(w, compute_uv=False)[0])
        if self.skip is not None:
            bound += float(np.linalg.svd(self.skip, compute_uv=False)[0])
        return bound


def _init_mlp(dims, rng):
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _flatten_params(weights, biases, skip=None):
    parts = [a.ravel() for a in weights + biases]
    if skip is not None:
        parts.append(skip.ravel())
    return np.concatenate(parts)


def _unflatten_params(vec, shapes_w, shapes_b, skip_shape=None):
    weights, biases = [], []
    pos = 0
    for shape in shapes_w:
        n = shape[0] * shape[1]
        weights.append(vec[pos:pos + n].reshape(shape))
        pos += n
    for shape in shapes_b:
        biases.append(vec[pos:pos + shape[0]])
        pos += shape[0]
    skip = None
    if skip_shape is not None:
        n = skip_shape[0] * skip_shape[1]
        skip = vec[pos:pos + n].reshape(skip_shape)
    return weights, biases, skip


def _mlp_value_and_grad(vec, x, y, shapes_w, shapes_b, skip_shape=None):
    """MSE loss and gradient via hand-written backprop through the ReLU stack."""
    weights, biases, skip = _unflatten_params(vec, shapes_w, shapes_b, skip_shape)
    last = len(weights) - 1
    acts = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    out = acts[-1] if skip is None else acts[-1] + x @ skip
    diff = out - y
    loss = float(np.mean(diff * diff))
    g = 2.0 * diff / diff.size
    g_skip = x.T @ g if skip is not None else None
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(last, -1, -1):
        if i < last:
            g = g * (pre[i] > 0)
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = g @ weights[i].T
    return loss, _flatten_params(gw, gb, g_skip)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 80
    batch_size: int = 128
    seed: int = 0
    val_fraction: float = 0.1
    linear_init: bool = True


def train_mlp(dataset, hidden_sizes=(256, 256), config=None):
    """Train the regressor with minibatch Adam on normalized samples.

    Returns the regressor; train/val loss curves, the held-out joint error and
    a Lipschitz estimate land in its metadata.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed)

    x_norm, _, _ = _normalize(dataset.inputs)
    y_norm = (dataset.targets - dataset.inputs.mean(axis=1, keepdims=True))
    centered = dataset.inputs - dataset.inputs.mean(axis=1, keepdims=True)
    scale = np.sqrt(np.mean(np.sum(centered ** 2, axis=2), axis=1))
    scale = np.maximum(scale, 1e-9)
    y_norm = y_norm / scale[:, None, None]

    n = len(dataset)
    x = x_norm.reshape(n, -1)
    y = y_norm.reshape(n, -1)
    order = rng.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n))) if n > 1 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        train_idx, val_idx = order, order[:0]
    xt, yt = x[train_idx], y[train_idx]
    xv, yv = x[val_idx], y[val_idx]

    dims = [x.shape[1], *hidden_sizes, y.shape[1]]
    weights, biases = _init_mlp(dims, rng)
    skip = None
    if config.linear_init:
        # solve the best linear map on the training split in closed form and
        # put it on the skip path; the zeroed last layer makes the net start
        # exactly at that baseline, so the ReLU stack learns a residual
        aug = np.hstack([xt, np.ones((xt.shape[0], 1))])
        sol = np.linalg.lstsq(aug, yt, rcond=None)[0]
        skip = sol[:-1]
        biases[-1] = sol[-1].copy()
        weights[-1] = np.zeros_like(weights[-1])
    shapes_w = [w.shape for w in weights]
    shapes_b = [b.shape for b in biases]
    skip_shape = None if skip is None else skip.shape
    vec = _flatten_params(weights, biases, skip)
    adam = adam_init(vec.size, lr=config.lr)

    def val_loss(params):
        if xv.shape[0] == 0:
            return float("nan")
        w, b, s = _unflatten_params(params, shapes_w, shapes_b, skip_shape)
        reg = MlpRegressor(w, b, skip=s)
        diff = reg.forward(xv) - yv
        return float(np.mean(diff * diff))

    train_curve, val_curve = [], []
    initial_val = val_loss(vec)
    best_vec, best_val = vec, initial_val
    for epoch in range(config.epochs):
        perm = rng.permutation(xt.shape[0])
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, xt.shape[0], config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            loss, grad = _mlp_value_and_grad(vec, xt[idx], yt[idx],
                                             shapes_w, shapes_b, skip_shape)
            if not np.isfinite(loss):
                raise ValueError(f"non-finite training loss at epoch {epoch}")
            adam, vec = adam_step(adam, vec, grad)
            epoch_loss += loss
            batches += 1
        train_curve.append(epoch_loss / max(batches, 1))
        val_curve.append(val_loss(vec))
        if not np.isfinite(best_val) or val_curve[-1] < best_val:
            best_vec, best_val = vec, val_curve[-1]

    # keep the iterate with the best held-out loss seen during training
    weights, biases, skip = _unflatten_params(best_vec, shapes_w, shapes_b,
                                              skip_shape)
    regressor = MlpRegressor(
        weights=[w.copy() for w in weights],
        biases=[b.copy() for b in biases],
        skip=None if skip is None else skip.copy(),
        target_convention=dataset.target_convention,
        metadata={
            "seed": config.seed,
            "epochs": config.epochs,
            "hidden_sizes": list(hidden_sizes),
            "train_curve": train_curve,
            "val_curve": val_curve,
            "initial_val_loss": initial_val,
        },
    )
    regressor.metadata["lipschitz_bound"] = regressor.lipschitz_bound()
    if val_curve and np.isfinite(val_curve[-1]):
        # held-out mean Euclidean joint error in mm, denormalized per sample
        pred = regressor.forward(xv).reshape(-1, y_norm.shape[1], 3)
        err = np.linalg.norm((pred - yv.reshape(pred.shape))
                             * scale[val_idx][:, None, None], axis=2)
        regressor.metadata["val_joint_error_mm"] = float(err.mean())
    return regressor


def predict_joints(regressor, mesh):
    """Regress fine-convention joints from a posed coarse-convention mesh."""
    verts = mesh.vertices[None]
    if verts.shape[1] * 3 != regressor.input_dim:
        raise ValueError(
            f"mesh has {verts.shape[1]} vertices, regressor expects "
            f"{regressor.input_dim // 3}"
        )
    x_norm, center, scale = _normalize(verts)
    out = regressor.forward(x_norm.reshape(1, -1)).reshape(1, -1, 3)
    joints = out * scale + center
    names = [f"fine_{i}" for i in range(joints.shape[1])]
    return Skeleton(joints[0], names, convention=regressor.target_convention)


@dataclass
class FusedSkeletonSpec:
    """Ordered joint picks: (name, source model, index in that model's skeleton)."""

    entries: list  # of (name, source in {"coarse", "fine"}, index)

    def __post_init__(self):
        names = [e[0] for e in self.entries]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValueError(f"duplicate joint names in fusion spec: {sorted(dupes)}")
        for name, source, index in self.entries:
            if source not in ("coarse", "fine"):
                raise ValueError(f"joint {name!r}: source must be coarse or fine, got {source!r}")
            if int(index) < 0:
                raise ValueError(f"joint {name!r}: negative index")

    def __len__(self):
        return len(self.entries)


def fuse_skeletons(coarse, fine, spec):
    """Pick joints from the two skeletons in the order the spec lists them."""
    joints = np.empty((len(spec), 3))
    names = []
    pools = {"coarse": coarse, "fine": fine}
    for row, (name, source, index) in enumerate(spec.entries):
        skel = pools[source]
        if index >= skel.joints.shape[0]:
            raise ValueError(
                f"joint {name!r}: index {index} out of range for {source} "
                f"skeleton of size {skel.joints.shape[0]}"
            )
        joints[row] = skel.joints[index]
        names.append(name)
    return Skeleton(joints, names, convention="fused")


def default_fusion_spec(coarse_count, fine_count, fine_extra=9):
    """All coarse joints plus the last ``fine_extra`` fine joints."""
    entries = [(f"coarse_{i}", "coarse", i) for i in range(coarse_count)]
    take = min(fine_extra, fine_count)
    entries += [(f"fine_{fine_count - take + i}", "fine", fine_count - take + i)
                for i in range(take)]
    return FusedSkeletonSpec(entries)
