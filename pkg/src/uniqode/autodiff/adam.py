from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from uniqode.errors import ShapeError


@dataclass
class AdamState:
    first_moments: list[np.ndarray]
    second_moments: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    return AdamState(
        [np.zeros_like(p, dtype=np.float64) for p in params],
        [np.zeros_like(p, dtype=np.float64) for p in params],
        0, beta1, beta2, epsilon,
    )


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are untouched."""
    if not (len(params) == len(grads) == len(state.first_moments)):
        raise ShapeError("params, grads and optimizer state must have the same length")
    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moments {m.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, eps)
