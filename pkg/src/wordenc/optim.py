"""Optimizers and learning-rate schedule.

Both optimizers keep per-tensor first/second moment accumulators with bias
correction.  Weight decay is decoupled (added to the update, not the
gradient).  The large-batch optimizer additionally scales each tensor's
update by the trust ratio ||w|| / ||update||.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _check_grads(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ArithmeticError(f"non-finite gradient in {name}; step rejected")


def _moments(state: OptimizerState, name: str, w: np.ndarray, g: np.ndarray, betas) -> tuple:
    """Update biased moments in place and return bias-corrected m_hat, v_hat."""
    b1, b2 = betas
    if name not in state.m:
        state.m[name] = np.zeros_like(w)
        state.v[name] = np.zeros_like(w)
    state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
    state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
    m_hat = state.m[name] / (1.0 - b1**state.step)
    v_hat = state.v[name] / (1.0 - b2**state.step)
    return m_hat, v_hat


def adam_step(
    params: ParameterStore,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-6,
    weight_decay: float = 0.0,
) -> None:
    """One Adam update with decoupled weight decay.

    delta = -lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
    """
    _check_grads(grads)
    state.step += 1
    for name, t in params.items():
        g = grads[name]
        m_hat, v_hat = _moments(state, name, t.data, g, betas)
        update = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * t.data
        t.data -= (lr * update).astype(t.data.dtype, copy=False)


def lamb_step(
    params: ParameterStore,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-6,
    weight_decay: float = 0.01,
) -> None:
    """One layer-wise trust-ratio update.

    r = m_hat / (sqrt(v_hat) + eps); u = r + weight_decay * w;
    phi = ||w|| / ||u|| if both norms are positive, else 1;
    delta = -lr * phi * u.
    """
    _check_grads(grads)
    state.step += 1
    for name, t in params.items():
        g = grads[name]
        m_hat, v_hat = _moments(state, name, t.data, g, betas)
        u = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * t.data
        w_norm = float(np.linalg.norm(t.data))
        u_norm = float(np.linalg.norm(u))
        phi = w_norm / u_norm if (w_norm > 0.0 and u_norm > 0.0) else 1.0
        t.data -= (lr * phi * u).astype(t.data.dtype, copy=False)


def lr_schedule(step: int, total_steps: int, peak_lr: float, warmup_fraction: float) -> float:
    """Linear ramp 0 -> peak over warmup_fraction*total_steps, then linear decay to 0."""
    if not 0.0 <= warmup_fraction < 1.0:
        raise ValueError(f"warmup_fraction must be in [0, 1), got {warmup_fraction}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return 0.0
    warmup_steps = warmup_fraction * total_steps
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    return peak_lr * (total_steps - step) / (total_steps - warmup_steps)
