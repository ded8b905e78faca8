"""Adam and Adamax updates over :class:`NetworkParams`."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ShapeError

ALGORITHMS = ("adam", "adamax")


@dataclass
class OptimizerState:
    algorithm: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default=None, repr=False)
    v: list = field(default=None, repr=False)  # second moment (Adam) or infinity norm (Adamax)

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown optimizer {self.algorithm!r}")
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")


def optimizer_step(params, grads, state):
    """One bias-corrected Adam/Adamax update. Returns ``(new_params, state)``."""
    if not state.lr > 0:
        raise ConfigurationError(f"learning rate must be positive, got {state.lr}")
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ShapeError("gradient structure does not match parameters")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in p_arrays]
        state.v = [np.zeros_like(p) for p in p_arrays]
    elif len(state.m) != len(p_arrays) or any(m.shape != p.shape for m, p in zip(state.m, p_arrays)):
        raise ShapeError("optimizer accumulators do not match parameters")

    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    new = []
    for i, (p, g) in enumerate(zip(p_arrays, g_arrays)):
        m = b1 * state.m[i] + (1.0 - b1) * g
        if state.algorithm == "adam":
            v = b2 * state.v[i] + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            v = np.maximum(b2 * state.v[i], np.abs(g))
            p = p - (state.lr / (1.0 - b1 ** t)) * m / (v + state.eps)
        state.m[i], state.v[i] = m, v
        new.append(p)
    return params.with_arrays(new), state


def clip_by_global_norm(grads, max_norm):
    arrays = grads.arrays()
    norm = np.sqrt(sum(float(np.sum(a * a)) for a in arrays))
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return grads.with_arrays([a * scale for a in arrays])
