"""AdamW with decoupled weight decay and the step learning-rate schedule."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(slots=True)
class OptimState:
    """Moment buffers and hyper-parameters of an AdamW optimizer.

    Parameters
    ----------
    betas : tuple of float
        Exponential decay rates of the first and second moments.
    eps : float
        Denominator stabiliser.
    weight_decay : float
        Decoupled weight-decay coefficient.
    base_lr : float
        Learning rate at iteration zero.
    step : int
        Number of updates applied so far.
    exp_avg, exp_avg_sq : dict of str to ndarray
        First and second moment buffers keyed by parameter name.
    """

    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    base_lr: float = 1e-4
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


def collect_grads(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of ``params``; parameters that received none contribute zeros."""
    return {
        name: tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        for name, tensor in params.items()
    }


def adamw_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: OptimState,
    lr: float,
) -> None:
    """Apply one bias-corrected AdamW update in place.

    ``w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * w``

    Parameters
    ----------
    params : mapping of str to Tensor
        Parameters to update.
    grads : mapping of str to ndarray
        Gradient for every parameter in ``params``.
    state : OptimState
        Moment buffers; created on first use and advanced by one step.
    lr : float
        Learning rate for this step.
    """
    if lr <= 0.0:
        msg = f"Learning rate must be positive, got {lr}."
        raise ConfigError(msg)
    beta1, beta2 = state.betas
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, tensor in params.items():
        grad = np.asarray(grads[name])
        if grad.shape != tensor.shape:
            msg = f"Gradient for {name!r} has shape {grad.shape}, parameter has {tensor.shape}."
            raise ShapeError(msg)
        exp_avg = state.exp_avg.get(name)
        exp_avg_sq = state.exp_avg_sq.get(name)
        if exp_avg is None or exp_avg_sq is None:
            exp_avg = np.zeros_like(tensor.data)
            exp_avg_sq = np.zeros_like(tensor.data)
        exp_avg = beta1 * exp_avg + (1.0 - beta1) * grad
        exp_avg_sq = beta2 * exp_avg_sq + (1.0 - beta2) * grad * grad
        state.exp_avg[name] = exp_avg
        state.exp_avg_sq[name] = exp_avg_sq
        update = (exp_avg / correction1) / (np.sqrt(exp_avg_sq / correction2) + state.eps)
        tensor.data = tensor.data - lr * update - lr * state.weight_decay * tensor.data


def step_lr(iteration: int, base_lr: float = 1e-4, step_size: int = 60_000, gamma: float = 0.5) -> float:
    """Learning rate ``base_lr * gamma ** floor(iteration / step_size)``."""
    if iteration < 0:
        msg = f"Iteration must be non-negative, got {iteration}."
        raise ConfigError(msg)
    if step_size < 1:
        msg = f"Step size must be positive, got {step_size}."
        raise ConfigError(msg)
    return base_lr * math.pow(gamma, iteration // step_size)


__all__ = ["OptimState", "adamw_step", "collect_grads", "step_lr"]
