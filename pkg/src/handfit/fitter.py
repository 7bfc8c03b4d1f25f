"""Coarse-to-fine fitting: wrist rotation first, then alternating pose/shape and
wrist refinement with two Adam optimizers per frame."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import EnergyWeights, total_energy
from .grad import pack_state, param_blocks, total_energy_and_grad, unpack_state
from .model import HandPoseState, forward, shaped_template
from .optim import OptimizationError, OptimizerConfig, adam_init, adam_step, minimize
from .rotations import batch_rodrigues, batch_rodrigues_backward

# wrist-rotation restart seeds: identity plus half-turns about each axis,
# so the coarse stage cannot stall on the far side of SO(3)
_RESTART_SEEDS = [
    np.zeros(3),
    np.array([np.pi, 0.0, 0.0]),
    np.array([0.0, np.pi, 0.0]),
    np.array([0.0, 0.0, np.pi]),
]


@dataclass
class FineConfig:
    # equal step sizes for both optimizers: the wrist block otherwise lags the
    # pose/shape block and dominates the error floor
    lr_pose: float = 3e-2
    lr_rot: float = 3e-2
    max_iters: int = 300
    rel_tol: float = 1e-7
    block_steps: int = 1
    plateau_patience: int = 10
    lr_decay: float = 0.7
    min_lr: float = 1e-6
    improve_tol: float = 1e-5  # relative improvement that counts as progress
    warm_lr_scale: float = 0.2  # step-size shrink when starting from a prior frame


@dataclass
class FitConfig:
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    coarse: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(
        lr=5e-2, max_iters=400, min_lr=1e-6))
    fine: FineConfig = field(default_factory=FineConfig)
    initial_theta: np.ndarray = None   # default: rest pose
    mean_beta: np.ndarray = None       # default: zero shape
    mapping: np.ndarray = None         # keypoint index -> skeleton joint index
    warm_start: bool = True
    lock_beta: bool = True
    optimize_translation: bool = False
    coarse_restarts: int = 4
    divergence_factor: float = 10.0
    polish: bool = True
    polish_iters: int = 20

    def resolved_mapping(self, n_keypoints):
        if self.mapping is not None:
            return np.asarray(self.mapping, dtype=int)
        return np.arange(n_keypoints)


@dataclass
class FrameResult:
    state: HandPoseState
    breakdown: object
    coarse_iterations: int
    fine_iterations: int
    converged: bool
    failed: bool = False
    error: str = ""
    fine_trace: list = field(default_factory=list)


@dataclass
class FitReport:
    frames: list
    wall_time: float

    @property
    def fitted(self):
        return [f for f in self.frames if not f.failed]


def _initial_state(model, config):
    j, b = model.joint_count, model.shape_dim
    theta = np.zeros((j - 1, 3)) if config.initial_theta is None \
        else np.asarray(config.initial_theta, dtype=float)
    beta = np.zeros(b) if config.mean_beta is None \
        else np.asarray(config.mean_beta, dtype=float)
    return HandPoseState(theta, beta, np.zeros(3), np.zeros(3))


def _wrist_translation(model, frame, mapping, beta):
    wrist_kp = np.where((mapping == 0) & frame.mask)[0]
    if wrist_kp.size == 0:
        raise ValueError("frame has no wrist keypoint in the mapping")
    rest_wrist = (model.joint_regressor @ shaped_template(model, beta))[0]
    return frame.keypoints[wrist_kp[0]] - rest_wrist


def coarse_fit(model, frame, config=None):
    """Recover the global wrist rotation with pose and shape frozen at their priors.

    With theta and beta held fixed, varying the wrist rotation rigidly rotates
    the whole skeleton about the posed wrist, so the keypoint energy reduces to
    a rotation-only alignment over the precomputed base skeleton.
    """
    config = config or FitConfig()
    mapping = config.resolved_mapping(frame.keypoints.shape[0])
    state = _initial_state(model, config)
    state.wrist_translation = _wrist_translation(model, frame, mapping, state.beta)

    _, base_skel = forward(model, state)
    obs = np.where(frame.mask)[0]
    targets = mapping[obs]
    pivot = base_skel.joints[0]
    arms = base_skel.joints[targets] - pivot          # rotate these about the wrist
    keypoints = frame.keypoints[obs]

    def value_and_grad(rw):
        rot = batch_rodrigues(rw[None])[0]
        resid = arms @ rot.T + pivot - keypoints
        value = float(np.sum(resid * resid))
        g_rot = 2.0 * resid.T @ arms
        grad = batch_rodrigues_backward(rw[None], g_rot[None])[0]
        return value, grad

    best = None
    n_starts = max(1, min(config.coarse_restarts, len(_RESTART_SEEDS)))
    for seed in _RESTART_SEEDS[:n_starts]:
        result = minimize(value_and_grad, seed, config.coarse)
        if best is None or result.final_value < best.final_value:
            best = result
    state.wrist_rotation = best.params
    state._coarse_iterations = best.iterations
    return state


def fine_fit(model, frame, warm_state, config=None, fit_beta=True, lr_scale=1.0):
    """Alternate single Adam steps on (theta, beta) and on the wrist rotation
    against the full weighted energy. Returns (state, final EnergyBreakdown).

    ``lr_scale`` shrinks both step sizes; sequence fitting uses it when the
    start point is a previous frame's solution and only a small correction is
    expected.
    """
    config = config or FitConfig()
    fine = config.fine
    mapping = config.resolved_mapping(frame.keypoints.shape[0])
    pose_shape, rot_block, trans_block = param_blocks(model)
    if not fit_beta:
        n_theta = (model.joint_count - 1) * 3
        pose_shape = pose_shape[:n_theta]
    block_a = pose_shape
    block_b = np.concatenate([rot_block, trans_block]) if config.optimize_translation \
        else rot_block

    vec = pack_state(warm_state)
    lr_pose, lr_rot = lr_scale * fine.lr_pose, lr_scale * fine.lr_rot

    for attempt in range(2):
        adam_a = adam_init(block_a.size, lr=lr_pose)
        adam_b = adam_init(block_b.size, lr=lr_rot)
        trace = []
        bd, g = total_energy_and_grad(model, unpack_state(model, vec), frame,
                                      mapping, config.weights)
        initial = bd.total
        best_total, best_vec = bd.total, vec.copy()
        prev = bd.total
        stall = 0
        improved_ever = False
        iterations = 0
        diverged = False
        for it in range(1, fine.max_iters + 1):
            iterations = it
            for _ in range(fine.block_steps):
                adam_a, sub = adam_step(adam_a, vec[block_a], g.to_vector()[block_a])
                vec = vec.copy()
                vec[block_a] = sub
                bd, g = total_energy_and_grad(model, unpack_state(model, vec), frame,
                                              mapping, config.weights)
            for _ in range(fine.block_steps):
                adam_b, sub = adam_step(adam_b, vec[block_b], g.to_vector()[block_b])
                vec = vec.copy()
                vec[block_b] = sub
                bd, g = total_energy_and_grad(model, unpack_state(model, vec), frame,
                                              mapping, config.weights)
            trace.append(bd)
            if not np.isfinite(bd.total):
                raise OptimizationError(f"energy non-finite at fine iteration {it}",
                                        iteration=it)
            if bd.total > config.divergence_factor * max(initial, 1e-12):
                diverged = True
                break
            if bd.total < best_total * (1.0 - fine.improve_tol):
                best_total, best_vec = bd.total, vec.copy()
                stall = 0
                improved_ever = True
            else:
                if bd.total < best_total:
                    best_total, best_vec = bd.total, vec.copy()
                stall += 1
                if stall >= fine.plateau_patience:
                    if not improved_ever:
                        break  # warm start was already at a fixed point
                    new_pose = adam_a.lr * fine.lr_decay
                    new_rot = adam_b.lr * fine.lr_decay
                    if max(new_pose, new_rot) < fine.min_lr:
                        break
                    adam_a = replace(adam_a, lr=max(new_pose, fine.min_lr))
                    adam_b = replace(adam_b, lr=max(new_rot, fine.min_lr))
                    stall = 0
            if abs(bd.total - prev) / max(abs(prev), 1e-12) < fine.rel_tol:
                break
            prev = bd.total
        if not diverged:
            break
        if attempt == 0:
            # divergence guard: halve the step sizes and restart the stage once
            lr_pose *= 0.5
            lr_rot *= 0.5
            vec = pack_state(warm_state)
        else:
            raise OptimizationError("fine stage diverged twice")

    state = unpack_state(model, best_vec)
    final_bd = total_energy(model, state, frame, mapping, config.weights)
    state._fine_iterations = iterations
    state._fine_trace = trace
    return state, final_bd


def _residual_vector(model, vec, frame, mapping, weights, obs, edges):
    """Total energy written as a residual vector r with r.r == total."""
    state = unpack_state(model, vec)
    mesh, skel = forward(model, state)
    r_key = (skel.joints[mapping[obs]] - frame.keypoints[obs]).ravel()
    r_reg = np.sqrt(weights.lambda_reg) * np.concatenate(
        [state.theta.ravel(), state.beta])
    smooth_factor = 2.0 if weights.double_count_edges else 1.0
    r_smooth = np.sqrt(weights.lambda_smooth * smooth_factor) * (
        mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]]).ravel()
    return np.concatenate([r_key, r_reg, r_smooth])


def polish_fit(model, frame, state, config=None, fit_beta=True):
    """Levenberg-Marquardt refinement of the full energy around an Adam solution.

    The energy is a sum of squares, so a damped Gauss-Newton step with a
    finite-difference Jacobian converges much deeper than first-order steps
    once the state is in the right basin. Only ever accepts improvements.
    """
    config = config or FitConfig()
    mapping = config.resolved_mapping(frame.keypoints.shape[0])
    obs = np.where(frame.mask)[0]
    if obs.size == 0:
        raise ValueError("no masked-in keypoints")
    edges = _edges_of(model)
    pose_shape, rot_block, trans_block = param_blocks(model)
    if not fit_beta:
        pose_shape = pose_shape[:(model.joint_count - 1) * 3]
    free = [pose_shape, rot_block]
    if config.optimize_translation:
        free.append(trans_block)
    idx = np.concatenate(free)

    vec = pack_state(state)
    r = _residual_vector(model, vec, frame, mapping, config.weights, obs, edges)
    cost = float(r @ r)
    mu = 1e-3
    h = 1e-6
    for _ in range(config.polish_iters):
        jac = np.empty((r.size, idx.size))
        for i, col in enumerate(idx):
            vp = vec.copy()
            vp[col] += h
            vm = vec.copy()
            vm[col] -= h
            jac[:, i] = (_residual_vector(model, vp, frame, mapping,
                                          config.weights, obs, edges)
                         - _residual_vector(model, vm, frame, mapping,
                                            config.weights, obs, edges)) / (2.0 * h)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        damping = np.diag(np.diag(jtj))
        accepted = False
        for _ in range(10):
            try:
                delta = np.linalg.solve(jtj + mu * damping, -jtr)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            cand = vec.copy()
            cand[idx] += delta
            r_cand = _residual_vector(model, cand, frame, mapping,
                                      config.weights, obs, edges)
            cost_cand = float(r_cand @ r_cand)
            if cost_cand < cost:
                vec, r, cost = cand, r_cand, cost_cand
                mu = max(mu * 0.3, 1e-9)
                accepted = True
                break
            mu *= 10.0
        if not accepted or np.linalg.norm(delta) < 1e-12:
            break
    refined = unpack_state(model, vec)
    breakdown = total_energy(model, refined, frame, mapping, config.weights)
    return refined, breakdown


def _edges_of(model):
    cached = getattr(model, "_edge_cache", None)
    if cached is None:
        cached = model.rest_edges()
        model._edge_cache = cached
    return cached


def fit_frame(model, frame, config=None):
    """Coarse wrist-rotation fit, fine alternating refinement, optional polish."""
    config = config or FitConfig()
    coarse_state = coarse_fit(model, frame, config)
    state, breakdown = fine_fit(model, frame, coarse_state, config, fit_beta=True)
    if config.polish:
        fine_meta = (state._fine_iterations, state._fine_trace)
        state, breakdown = polish_fit(model, frame, state, config, fit_beta=True)
        state._fine_iterations, state._fine_trace = fine_meta
    state._coarse_iterations = getattr(coarse_state, "_coarse_iterations", 0)
    return state, breakdown


def fit_sequence(model, frames, config=None):
    """Fit every frame; warm-start from the previous solution when configured.

    A frame that fails (for example fully masked out) is flagged in the report
    and fitting continues with the next frame.
    """
    if not frames:
        raise ValueError("fit_sequence needs at least one frame")
    config = config or FitConfig()
    start = time.perf_counter()
    results = []
    prev_state = None
    frame0_beta = None
    for i, frame in enumerate(frames):
        try:
            if i == 0 or prev_state is None or not config.warm_start:
                if i > 0 and config.lock_beta and frame0_beta is not None:
                    frozen = replace_config_beta(config, frame0_beta)
                    coarse_state = coarse_fit(model, frame, frozen)
                    state, bd = fine_fit(model, frame, coarse_state, frozen,
                                         fit_beta=False)
                    if frozen.polish:
                        meta = (state._fine_iterations, state._fine_trace)
                        state, bd = polish_fit(model, frame, state, frozen,
                                               fit_beta=False)
                        state._fine_iterations, state._fine_trace = meta
                    coarse_iters = getattr(coarse_state, "_coarse_iterations", 0)
                else:
                    state, bd = fit_frame(model, frame, config)
                    coarse_iters = getattr(state, "_coarse_iterations", 0)
            else:
                warm = prev_state.copy()
                if not config.optimize_translation:
                    # the posed wrist equals the rest wrist plus the global
                    # translation, so the frame's wrist keypoint pins it exactly
                    mapping = config.resolved_mapping(frame.keypoints.shape[0])
                    warm.wrist_translation = _wrist_translation(
                        model, frame, mapping, warm.beta)
                state, bd = fine_fit(model, frame, warm, config,
                                     fit_beta=not config.lock_beta,
                                     lr_scale=config.fine.warm_lr_scale)
                if config.polish:
                    meta = (state._fine_iterations, state._fine_trace)
                    state, bd = polish_fit(model, frame, state, config,
                                           fit_beta=not config.lock_beta)
                    state._fine_iterations, state._fine_trace = meta
                coarse_iters = 0
            if i == 0:
                frame0_beta = state.beta.copy()
            results.append(FrameResult(
                state=state,
                breakdown=bd,
                coarse_iterations=coarse_iters,
                fine_iterations=getattr(state, "_fine_iterations", 0),
                converged=True,
                fine_trace=list(getattr(state, "_fine_trace", [])),
            ))
            prev_state = state
        except (ValueError, OptimizationError) as exc:
            results.append(FrameResult(
                state=None, breakdown=None, coarse_iterations=0,
                fine_iterations=0, converged=False, failed=True, error=str(exc),
            ))
    return FitReport(frames=results, wall_time=time.perf_counter() - start)


def replace_config_beta(config, beta):
    """Copy of the config whose mean shape is pinned to a known beta."""
    return replace(config, mean_beta=np.asarray(beta, dtype=float))
