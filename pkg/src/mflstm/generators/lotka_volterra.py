"""Three-species prey-predator system integrated with explicit midpoint RK2."""
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, SolverError

MU_DOMAIN = (1.0, 3.0)
Y0 = 0.5


def lv_rhs(y, mu):
    """Right-hand side; ``y`` may carry extra leading axes (last axis = species)."""
    y = np.asarray(y, dtype=np.float64)
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    return np.stack([
        y1 * (mu - 0.1 * y1 - 0.5 * y2 - 0.5 * y3),
        y2 * (-mu + 0.5 * y1 - 0.3 * y3),
        y3 * (-mu + 0.2 * y1 + 0.5 * y2),
    ], axis=-1)


def step_count(T, dt):
    """Number of steps ``T/dt``, which must be an integer up to rounding."""
    ratio = T / dt
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 8 * np.finfo(float).eps * max(1.0, ratio):
        raise DomainError(f"T={T} is not an integer multiple of dt={dt}")
    return n


@dataclass(frozen=True)
class LotkaVolterraConfig:
    mu: float
    dt: float
    T: float = 15.0
    y0: float = Y0
    check_domain: bool = True

    def __post_init__(self):
        if self.check_domain and not MU_DOMAIN[0] <= self.mu <= MU_DOMAIN[1]:
            raise DomainError(f"mu={self.mu} outside {MU_DOMAIN}")
        if not (self.dt > 0 and self.T > 0):
            raise DomainError("dt and T must be positive")
        step_count(self.T, self.dt)

    @property
    def n_steps(self):
        return step_count(self.T, self.dt)


def _rhs_scalar(y1, y2, y3, mu):
    return (y1 * (mu - 0.1 * y1 - 0.5 * y2 - 0.5 * y3),
            y2 * (-mu + 0.5 * y1 - 0.3 * y3),
            y3 * (-mu + 0.2 * y1 + 0.5 * y2))


def integrate_rk2(config):
    """Trajectory on ``0, dt, ..., T`` as an ``(n_steps + 1) x 3`` array."""
    n, dt, mu = config.n_steps, config.dt, float(config.mu)
    half = 0.5 * dt
    traj = np.empty((n + 1, 3))
    y1 = y2 = y3 = float(config.y0)
    traj[0] = y1, y2, y3
    # scalar loop: three species are too few for array overhead to pay off
    for i in range(n):
        a1, a2, a3 = _rhs_scalar(y1, y2, y3, mu)
        b1, b2, b3 = _rhs_scalar(y1 + half * a1, y2 + half * a2, y3 + half * a3, mu)
        y1, y2, y3 = y1 + dt * b1, y2 + dt * b2, y3 + dt * b3
        traj[i + 1] = y1, y2, y3
    bad = ~np.all(np.isfinite(traj), axis=1)
    if bad.any():
        step = int(np.argmax(bad))
        raise SolverError(f"non-finite state after step {step}", step=step)
    return traj


def lv_trajectory(mu, dt, T, sample_dt=None):
    """Times and states sampled every ``sample_dt`` (a multiple of ``dt``)."""
    cfg = LotkaVolterraConfig(float(mu), dt, T)
    traj = integrate_rk2(cfg)
    stride = 1 if sample_dt is None else step_count(sample_dt, dt)
    idx = np.arange(0, cfg.n_steps + 1, stride)
    return idx * dt, traj[idx]


def lv_evaluator(dt, T_solve):
    """Vectorized evaluator ``(mu, times) -> states`` for :func:`build_grid_dataset`.

    The system is integrated to ``T_solve`` with step ``dt`` and read at the
    requested times, which must lie on the integration grid.
    """
    def evaluate(mu, times):
        cfg = LotkaVolterraConfig(float(mu), dt, T_solve)
        traj = integrate_rk2(cfg)
        idx = np.rint(np.asarray(times) / dt).astype(int)
        if np.any(np.abs(idx * dt - times) > 1e-9 * max(1.0, T_solve)) or idx.max() > cfg.n_steps:
            raise DomainError("requested times are not on the integration grid")
        return traj[idx]
    return evaluate
