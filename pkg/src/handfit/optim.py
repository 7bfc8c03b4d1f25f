"""From-scratch Adam optimizer, gradient evaluation modes and a minimize driver."""

from dataclasses import dataclass, field, replace

import numpy as np

from .dual import Dual


class OptimizationError(RuntimeError):
    """Objective became non-finite or the optimizer diverged."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class AdamState:
    """Adam moments and hyperparameters for one parameter vector."""

    t: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.lr <= 0 or self.epsilon <= 0:
            raise ValueError("lr and epsilon must be positive")
        if self.t < 0:
            raise ValueError("step count must be >= 0")


def adam_init(n, lr=1e-2, beta1=0.9, beta2=0.999, epsilon=1e-8):
    return AdamState(t=0, m=np.zeros(n), v=np.zeros(n),
                     lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(state, params, grad):
    """One bias-corrected Adam update; pure, returns (new_state, new_params)."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, "
            f"moments {state.m.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise OptimizationError("non-finite gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, t=t, m=m, v=v), new_params


@dataclass
class GradientEvaluator:
    """Gradient dispatch: hand-derived adjoint (default) or dual-number forward mode."""

    mode: str = "analytic-adjoint"
    fd_step: float = 1e-5  # used only by verification helpers

    def gradient(self, objective, params):
        params = np.asarray(params, dtype=float)
        if self.mode == "analytic-adjoint":
            if hasattr(objective, "value_and_grad"):
                value, grad = objective.value_and_grad(params)[:2]
            elif hasattr(objective, "grad"):
                value, grad = objective(params), objective.grad(params)
            else:
                raise TypeError("objective provides no analytic gradient")
        elif self.mode == "forward-dual":
            value, grad = _forward_dual_gradient(objective, params)
        else:
            raise ValueError(f"unknown gradient mode {self.mode!r}")
        if not np.isfinite(value):
            raise OptimizationError("objective is non-finite at the evaluation point")
        return np.asarray(grad, dtype=float)


def _forward_dual_gradient(objective, params):
    n = params.size
    grad = np.empty(n)
    value = None
    for i in range(n):
        seed = np.zeros(n)
        seed[i] = 1.0
        if hasattr(objective, "directional"):
            value, grad[i] = objective.directional(params, seed)
        else:
            out = objective(Dual(params, seed))
            value, grad[i] = float(out.val), float(out.dot)
    if value is None:  # zero-length parameter vector
        value = float(objective(params))
    return value, grad


def finite_difference(fn, params, h=1e-5):
    """Central-difference gradient; the verification oracle for both modes."""
    params = np.asarray(params, dtype=float)
    grad = np.empty(params.size)
    for i in range(params.size):
        step = np.zeros(params.size)
        step[i] = h
        grad[i] = (fn(params + step) - fn(params - step)) / (2.0 * h)
    return grad


@dataclass
class OptimizerConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iters: int = 500
    rel_tol: float = 1e-7
    # plateau schedule: halve the step size when the best value stalls,
    # which lets Adam settle far below its initial step amplitude
    plateau_patience: int = 15
    lr_decay: float = 0.5
    min_lr: float = 1e-7


@dataclass
class MinimizeResult:
    params: np.ndarray
    trace: list          # (value, aux) per evaluation, index 0 = start
    iterations: int
    converged: bool
    improved: bool
    final_value: float


def minimize(value_and_grad, params0, config=None):
    """Adam descent with plateau step decay; returns the best iterate seen.

    ``value_and_grad(params)`` returns (value, grad) or (value, grad, aux);
    aux is recorded in the trace.
    """
    config = config or OptimizerConfig()
    params = np.asarray(params0, dtype=float).copy()

    def evaluate(p, iteration):
        out = value_and_grad(p)
        value, grad = out[0], out[1]
        aux = out[2] if len(out) > 2 else None
        if not np.isfinite(value):
            raise OptimizationError(
                f"objective non-finite at iteration {iteration}", iteration=iteration)
        return float(value), np.asarray(grad, dtype=float), aux

    value, grad, aux = evaluate(params, 0)
    trace = [(value, aux)]
    initial = value
    best_value, best_params = value, params.copy()
    adam = adam_init(params.size, lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, epsilon=config.epsilon)
    converged = False
    stall = 0
    iterations = 0
    prev = value
    for it in range(1, config.max_iters + 1):
        adam, params = adam_step(adam, params, grad)
        value, grad, aux = evaluate(params, it)
        trace.append((value, aux))
        iterations = it
        if value < best_value - 1e-15 * max(abs(best_value), 1.0):
            best_value, best_params = value, params.copy()
            stall = 0
        else:
            stall += 1
            if stall >= config.plateau_patience:
                new_lr = adam.lr * config.lr_decay
                if new_lr < config.min_lr:
                    converged = True
                    break
                adam = replace(adam, lr=new_lr)
                stall = 0
        if abs(value - prev) / max(abs(prev), 1e-12) < config.rel_tol:
            converged = True
            break
        prev = value
    return MinimizeResult(
        params=best_params,
        trace=trace,
        iterations=iterations,
        converged=converged,
        improved=best_value <= initial,
        final_value=best_value,
    )
