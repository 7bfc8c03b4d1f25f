"""Parametric skinned hand model: core types, validation, forward kinematics, LBS."""

from dataclasses import dataclass, field

import numpy as np

from .rotations import batch_rodrigues, rodrigues

TWO_PI = 2.0 * np.pi


class ModelValidationError(ValueError):
    """A hand model violated one of its structural invariants."""


def edges_from_faces(faces):
    """Unique undirected edges (E, 2) with i < j, derived from triangle faces."""
    f = np.asarray(faces)
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


@dataclass
class Mesh:
    """Triangle mesh with cached undirected edge adjacency."""

    vertices: np.ndarray  # (V, 3), mm
    faces: np.ndarray     # (F, 3), int
    edges: np.ndarray = None  # (E, 2), unique undirected pairs

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=int)
        if self.edges is None:
            self.edges = edges_from_faces(self.faces)
        else:
            self.edges = np.asarray(self.edges, dtype=int)


@dataclass
class Skeleton:
    """Joint positions with a naming convention tag."""

    joints: np.ndarray  # (J', 3), mm
    names: list
    convention: str = ""

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        if len(self.names) != self.joints.shape[0]:
            raise ValueError(
                f"skeleton has {self.joints.shape[0]} joints but {len(self.names)} names"
            )
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("skeleton joint positions must be finite")


def _wrap_axis_angle(w):
    """Wrap each axis-angle row so its magnitude stays below 2*pi."""
    w = np.array(w, dtype=float)
    flat = w.reshape(-1, 3)
    mags = np.linalg.norm(flat, axis=1)
    over = mags >= TWO_PI
    if np.any(over):
        factor = np.ones_like(mags)
        factor[over] = (mags[over] % TWO_PI) / mags[over]
        flat *= factor[:, None]
    return flat.reshape(w.shape)


@dataclass
class HandPoseState:
    """Optimization variables: articulation, shape, wrist rotation and translation."""

    theta: np.ndarray             # (J-1, 3) axis-angle, radians
    beta: np.ndarray              # (B,) shape coefficients
    wrist_rotation: np.ndarray    # (3,) axis-angle, radians
    wrist_translation: np.ndarray = None  # (3,), mm

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.wrist_rotation = np.asarray(self.wrist_rotation, dtype=float)
        if self.wrist_translation is None:
            self.wrist_translation = np.zeros(3)
        self.wrist_translation = np.asarray(self.wrist_translation, dtype=float)
        for name in ("theta", "beta", "wrist_rotation", "wrist_translation"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")
        self.theta = _wrap_axis_angle(self.theta)
        self.wrist_rotation = _wrap_axis_angle(self.wrist_rotation)

    @classmethod
    def zero(cls, joint_count, shape_dim):
        return cls(
            theta=np.zeros((joint_count - 1, 3)),
            beta=np.zeros(shape_dim),
            wrist_rotation=np.zeros(3),
            wrist_translation=np.zeros(3),
        )

    def copy(self):
        return HandPoseState(
            self.theta.copy(), self.beta.copy(),
            self.wrist_rotation.copy(), self.wrist_translation.copy(),
        )


@dataclass
class HandModel:
    """Immutable skinned hand model; ``forward`` is a pure function of the state."""

    template_vertices: np.ndarray   # (V, 3), mm
    faces: np.ndarray               # (F, 3)
    shape_basis: np.ndarray         # (B, V, 3), mm per unit beta
    skinning_weights: np.ndarray    # (V, J)
    kinematic_tree: np.ndarray      # (J,) parent index, root has -1
    joint_regressor: np.ndarray     # (J, V)
    fingertip_vertex_ids: np.ndarray  # (K,)
    joint_names: list = None
    name: str = "hand"

    def __post_init__(self):
        self.template_vertices = np.asarray(self.template_vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=int)
        self.shape_basis = np.asarray(self.shape_basis, dtype=float)
        self.skinning_weights = np.asarray(self.skinning_weights, dtype=float)
        self.kinematic_tree = np.asarray(self.kinematic_tree, dtype=int)
        self.joint_regressor = np.asarray(self.joint_regressor, dtype=float)
        self.fingertip_vertex_ids = np.asarray(self.fingertip_vertex_ids, dtype=int)
        if self.joint_names is None:
            self.joint_names = [f"joint_{j}" for j in range(self.joint_count)]

    @property
    def vertex_count(self):
        return self.template_vertices.shape[0]

    @property
    def joint_count(self):
        return self.kinematic_tree.shape[0]

    @property
    def shape_dim(self):
        return self.shape_basis.shape[0]

    @property
    def skeleton_size(self):
        """Joints plus fingertip pseudo-joints."""
        return self.joint_count + self.fingertip_vertex_ids.shape[0]

    @property
    def skeleton_names(self):
        return list(self.joint_names) + [
            f"tip_{i}" for i in range(len(self.fingertip_vertex_ids))
        ]

    def rest_edges(self):
        return edges_from_faces(self.faces)


def validate_model(model):
    """Check every structural invariant; raise ModelValidationError naming the offender."""
    v = model.vertex_count
    j = model.joint_count
    if model.template_vertices.shape != (v, 3):
        raise ModelValidationError("template_vertices must be (V, 3)")
    if model.shape_basis.shape[1:] != (v, 3):
        raise ModelValidationError("shape_basis must be (B, V, 3)")
    if model.skinning_weights.shape != (v, j):
        raise ModelValidationError(
            f"skinning_weights shape {model.skinning_weights.shape} != ({v}, {j})"
        )
    if model.joint_regressor.shape != (j, v):
        raise ModelValidationError(
            f"joint_regressor shape {model.joint_regressor.shape} != ({j}, {v})"
        )

    if np.any(model.skinning_weights < 0):
        row = int(np.argwhere(model.skinning_weights < 0)[0][0])
        raise ModelValidationError(f"skinning_weights row {row} has a negative entry")
    sums = model.skinning_weights.sum(axis=1)
    bad = np.where(np.abs(sums - 1.0) > 1e-6)[0]
    if bad.size:
        raise ModelValidationError(
            f"skinning_weights row {bad[0]} sums to {sums[bad[0]]:.8f}, expected 1"
        )

    if np.any(model.joint_regressor < 0):
        row = int(np.argwhere(model.joint_regressor < 0)[0][0])
        raise ModelValidationError(f"joint_regressor row {row} has a negative entry")
    jsums = model.joint_regressor.sum(axis=1)
    bad = np.where(np.abs(jsums - 1.0) > 1e-6)[0]
    if bad.size:
        raise ModelValidationError(
            f"joint_regressor row {bad[0]} sums to {jsums[bad[0]]:.8f}, expected 1"
        )

    tree = model.kinematic_tree
    roots = np.where(tree == -1)[0]
    if roots.size != 1:
        raise ModelValidationError(f"kinematic tree has {roots.size} roots, expected 1")
    for child, parent in enumerate(tree):
        if parent == -1:
            continue
        if parent < -1 or parent >= j:
            raise ModelValidationError(f"kinematic tree parent {parent} out of range")
        if parent >= child:
            raise ModelValidationError(
                "kinematic tree has cycle or is not topologically ordered "
                f"(joint {child} has parent {parent})"
            )

    if np.any(model.faces < 0) or np.any(model.faces >= v):
        raise ModelValidationError("face index out of range")
    if np.any(model.fingertip_vertex_ids < 0) or np.any(model.fingertip_vertex_ids >= v):
        raise ModelValidationError("fingertip vertex index out of range")
    return model


def shaped_template(model, beta):
    """Template displaced by the shape blendshapes."""
    if beta.shape[0] != model.shape_dim:
        raise ValueError(f"beta has {beta.shape[0]} coefficients, model expects {model.shape_dim}")
    return model.template_vertices + np.tensordot(beta, model.shape_basis, axes=1)


def regress_rest_joints(model, shaped_vertices):
    """Rest joint locations as the regressor applied to shaped vertices."""
    shaped_vertices = np.asarray(shaped_vertices, dtype=float)
    if shaped_vertices.shape != (model.vertex_count, 3):
        raise ValueError(
            f"expected ({model.vertex_count}, 3) vertices, got {shaped_vertices.shape}"
        )
    joints = model.joint_regressor @ shaped_vertices
    return Skeleton(joints, list(model.joint_names), convention=model.name)


def pose_transforms(model, state, rest_joints):
    """World rotation (J,3,3) and translation (J,3) per joint, composed along the tree."""
    j = model.joint_count
    r_local = batch_rodrigues(np.vstack([state.wrist_rotation[None], state.theta]))
    r_world = np.empty((j, 3, 3))
    t_world = np.empty((j, 3))
    r_world[0] = r_local[0]
    t_world[0] = rest_joints[0] - r_local[0] @ rest_joints[0] + state.wrist_translation
    for k in range(1, j):
        p = model.kinematic_tree[k]
        local_t = rest_joints[k] - r_local[k] @ rest_joints[k]
        r_world[k] = r_world[p] @ r_local[k]
        t_world[k] = r_world[p] @ local_t + t_world[p]
    return r_local, r_world, t_world


def forward(model, state):
    """Pose the model: shape blending, kinematic chain, linear blend skinning.

    Returns (Mesh, Skeleton); the skeleton holds the J articulated joints
    followed by the fingertip pseudo-joints.
    """
    if state.theta.shape != (model.joint_count - 1, 3):
        raise ValueError(
            f"theta has shape {state.theta.shape}, model expects ({model.joint_count - 1}, 3)"
        )
    shaped = shaped_template(model, state.beta)
    rest_joints = model.joint_regressor @ shaped
    _, r_world, t_world = pose_transforms(model, state, rest_joints)

    posed_joints = np.matmul(r_world, rest_joints[:, :, None])[:, :, 0] + t_world
    w = model.skinning_weights
    transformed = np.matmul(shaped[None], r_world.transpose(0, 2, 1))  # (J, V, 3)
    vertices = np.sum(w.T[:, :, None] * transformed, axis=0) + w @ t_world

    tips = vertices[model.fingertip_vertex_ids]
    skel = np.vstack([posed_joints, tips]) if tips.size else posed_joints
    cached = getattr(model, "_edge_cache", None)
    if cached is None:
        cached = edges_from_faces(model.faces)
        model._edge_cache = cached
    mesh = Mesh(vertices, model.faces, edges=cached)
    skeleton = Skeleton(skel, model.skeleton_names, convention=model.name)
    return mesh, skeleton


def _chain_layout(joint_count, n_chains=5):
    """Assign non-root joints to chains; returns list of per-chain joint id lists."""
    remaining = joint_count - 1
    base = remaining // n_chains
    extra = remaining % n_chains
    chains = []
    nxt = 1
    for c in range(n_chains):
        length = base + (1 if c < extra else 0)
        chains.append(list(range(nxt, nxt + length)))
        nxt += length
    return chains


def synth_model(seed, v_count, j_count, b_dim, name=None):
    """Deterministic synthetic hand-like model: a palm plus five tube fingers.

    Stands in for licensed assets in tests and demos. Vertices are grouped in
    square rings along each bone, skinning blends each ring between its bone
    and the parent, and each joint is regressed from the ring closest to it.
    """
    if j_count < 4:
        raise ValueError(f"j_count must be >= 4, got {j_count}")
    if v_count < 4 * j_count:
        raise ValueError(f"v_count must be >= 4 * j_count, got {v_count} < {4 * j_count}")
    if b_dim < 1:
        raise ValueError(f"b_dim must be >= 1, got {b_dim}")

    rng = np.random.default_rng(seed)
    chains = _chain_layout(j_count)
    parents = np.full(j_count, -1, dtype=int)
    for chain in chains:
        prev = 0
        for jid in chain:
            parents[jid] = prev
            prev = jid

    # rest joints: wrist at origin, fingers fanning forward in +y with spread in x
    rest = np.zeros((j_count, 3))
    spread = np.linspace(-0.9, 0.9, len(chains))
    for c, chain in enumerate(chains):
        direction = np.array([np.sin(spread[c]), np.cos(spread[c]), 0.12 * (c - 2)])
        direction /= np.linalg.norm(direction)
        # small per-chain jitter keeps chains from being coplanar
        direction = direction + rng.normal(scale=0.03, size=3)
        direction /= np.linalg.norm(direction)
        # gentle per-segment bend, like a relaxed finger
        lateral = np.cross(direction, np.array([0.0, 0.0, 1.0]))
        lateral /= np.linalg.norm(lateral)
        curl = rodrigues(0.1 * lateral)
        pos = np.array([28.0 * np.sin(spread[c]), 24.0, 0.0])  # knuckle
        seg = 26.0
        for jid in chain:
            rest[jid] = pos
            pos = pos + seg * direction
            direction = curl @ direction
            seg *= 0.82

    # distribute vertices: rings of 4 along each bone segment
    ring = 4
    per_joint = np.full(j_count, (v_count // ring) // j_count, dtype=int)
    leftover = v_count // ring - per_joint.sum()
    per_joint[:leftover] += 1  # ring counts per joint
    tail = v_count - per_joint.sum() * ring  # vertices that do not fill a ring

    # bone axis for joint j: toward mean of children, or onward for leaves
    children = [[] for _ in range(j_count)]
    for child, parent in enumerate(parents):
        if parent >= 0:
            children[parent].append(child)
    axes = np.zeros((j_count, 3))
    lengths = np.zeros(j_count)
    for jid in range(j_count):
        if children[jid]:
            target = np.mean([rest[c] for c in children[jid]], axis=0)
            d = target - rest[jid]
        else:
            p = parents[jid]
            d = rest[jid] - rest[p] if p >= 0 else np.array([0.0, 18.0, 0.0])
        lengths[jid] = max(np.linalg.norm(d), 12.0)
        axes[jid] = d / np.linalg.norm(d) if np.linalg.norm(d) > 1e-9 else np.array([0, 1.0, 0])

    verts = []
    owners = []       # (joint id, blend fraction toward parent) per vertex
    stations = []     # ring index per vertex, -1 for filler
    base_angle = np.pi / 4
    for jid in range(j_count):
        n_rings = per_joint[jid]
        axis = axes[jid]
        # orthonormal frame around the bone axis
        ref = np.array([1.0, 0.0, 0.0])
        if abs(axis @ ref) > 0.9:
            ref = np.array([0.0, 0.0, 1.0])
        u = np.cross(axis, ref)
        u /= np.linalg.norm(u)
        w2 = np.cross(axis, u)
        # slim finger tubes: keypoints pin each bone frame only up to twist
        # about the bone segment, so off-axis vertex mass would make vertex
        # positions depend on an unobservable degree of freedom
        radius = 6.5 if jid == 0 else 0.7
        for r in range(n_rings):
            frac = (r + 0.5) / n_rings
            center = rest[jid] + frac * lengths[jid] * axis
            # blend toward parent strongest near the proximal end; use exact
            # 1/64 fractions so float32 rows still sum to 1
            blend = 0.0 if jid == 0 else (16 - round(12 * frac)) / 64.0
            for s in range(ring):
                ang = base_angle + 2.0 * np.pi * s / ring + 0.35 * frac
                jitter = rng.normal(scale=0.1, size=3)
                verts.append(center + radius * (np.cos(ang) * u + np.sin(ang) * w2) + jitter)
                owners.append((jid, blend))
                stations.append(r)
    # filler vertices attach to the palm
    for _ in range(tail):
        verts.append(rng.normal(scale=7.0, size=3) + np.array([0.0, 10.0, -6.0]))
        owners.append((0, 0.0))
        stations.append(-1)
    template = np.asarray(verts)

    # faces: connect consecutive rings within each bone
    faces = []
    idx = 0
    ring_starts = {}
    for jid in range(j_count):
        starts = []
        for _ in range(per_joint[jid]):
            starts.append(idx)
            idx += ring
        ring_starts[jid] = starts
        for a, b in zip(starts[:-1], starts[1:]):
            for s in range(ring):
                s2 = (s + 1) % ring
                faces.append([a + s, a + s2, b + s])
                faces.append([a + s2, b + s2, b + s])
        if len(starts) == 1:
            a = starts[0]
            faces.append([a, a + 1, a + 2])
            faces.append([a, a + 2, a + 3])
    # stitch filler vertices to the palm with degenerate-free triangles
    for t in range(tail):
        vid = len(verts) - tail + t
        a = ring_starts[0][0]
        faces.append([vid, a + (t % ring), a + ((t + 1) % ring)])
    faces = np.asarray(faces, dtype=int)

    weights = np.zeros((v_count, j_count))
    for vid, (jid, blend) in enumerate(owners):
        p = parents[jid]
        if p < 0 or blend == 0.0:
            weights[vid, jid] = 1.0
        else:
            weights[vid, jid] = 1.0 - blend
            weights[vid, p] = blend

    regressor = np.zeros((j_count, v_count))
    for jid in range(j_count):
        first = ring_starts[jid][0]
        regressor[jid, first:first + ring] = 0.25

    tips = []
    for chain in chains:
        leaf = chain[-1]
        last = ring_starts[leaf][-1]
        tips.append(last)  # first vertex of the most distal ring
    tips = np.asarray(tips, dtype=int)

    # shape displacement fields built from structured modes that all move the
    # regressed joints (per-chain scaling, per-chain tilt, global scaling), so
    # every shape direction is observable from the skeleton; a small sinusoidal
    # field on top gives per-vertex texture
    chain_of = np.full(j_count, -1, dtype=int)
    for c, chain in enumerate(chains):
        for jid in chain:
            chain_of[jid] = c
    owner_j = np.array([jid for jid, _ in owners])
    modes = []
    for c, chain in enumerate(chains):
        sel = chain_of[owner_j] == c
        base_pos = rest[chain[0]]
        arm = template - base_pos
        reach = np.linalg.norm(rest[chain[-1]] - base_pos) + lengths[chain[-1]]
        stretch = np.zeros_like(template)
        stretch[sel] = 0.06 * arm[sel]          # scale the finger about its knuckle
        modes.append(stretch)
        ortho = np.cross(axes[chain[0]], np.array([0.0, 0.0, 1.0]))
        ortho /= np.linalg.norm(ortho)
        tilt = np.zeros_like(template)
        tilt[sel] = 2.0 * np.outer(np.linalg.norm(arm[sel], axis=1) / reach, ortho)
        modes.append(tilt)
    modes.append(0.04 * template)               # global scaling about the wrist
    basis = np.zeros((b_dim, v_count, 3))
    scale = np.max(np.linalg.norm(template, axis=1))
    for b in range(b_dim):
        mix = rng.normal(size=len(modes)) / np.sqrt(len(modes))
        field = sum(m * w for m, w in zip(modes, mix))
        freq = rng.normal(scale=1.0, size=3) / scale
        phase = rng.uniform(0, 2 * np.pi)
        direction = rng.normal(size=3)
        direction *= 0.3 / np.linalg.norm(direction)
        field = field + np.sin(template @ freq + phase)[:, None] * direction
        rms = np.sqrt(np.mean(np.sum(field * field, axis=1)))
        basis[b] = field * (0.8 / rms)

    def f32(a):
        return a.astype(np.float32).astype(np.float64)

    names = ["wrist"]
    for c, chain in enumerate(chains):
        names += [f"f{c}_j{k}" for k in range(len(chain))]
    # names follow joint id order
    ordered = [None] * j_count
    ordered[0] = "wrist"
    for c, chain in enumerate(chains):
        for k, jid in enumerate(chain):
            ordered[jid] = f"f{c}_j{k}"

    model = HandModel(
        template_vertices=f32(template),
        faces=faces,
        shape_basis=f32(basis),
        skinning_weights=f32(weights),
        kinematic_tree=parents,
        joint_regressor=f32(regressor),
        fingertip_vertex_ids=tips,
        joint_names=ordered,
        name=name or f"synth-j{j_count}-v{v_count}-s{seed}",
    )
    return validate_model(model)
