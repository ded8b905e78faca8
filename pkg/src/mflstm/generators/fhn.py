"""One-dimensional FitzHugh-Nagumo cable model on a uniform finite-difference grid.

Potential ``nu`` and recovery ``omega`` obey::

    mu nu_t - mu^2 nu_xx + I_ion(nu) + omega = 0
    omega_t + gamma omega - b nu = 0

with ``nu_x(0, t) = -i0(t)``, ``nu_x(L, t) = 0`` and ``I_ion(nu) = nu (nu - 0.1)(nu - 1)``.
Diffusion is implicit (one tridiagonal solve per step); the ionic current,
the coupling and the recovery variable are explicit.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from ..errors import DomainError, SolverError
from .lotka_volterra import step_count

MU_DOMAIN = (0.005, 0.05)


def ionic_current(nu):
    return nu * (nu - 0.1) * (nu - 1.0)


@dataclass(frozen=True)
class Stimulus:
    """Boundary current ``i0(t) = amplitude * t**power * exp(-rate * t)``."""

    amplitude: float = 50000.0
    power: float = 3.0
    rate: float = 15.0

    def __call__(self, t):
        return self.amplitude * t ** self.power * np.exp(-self.rate * t)


@dataclass(frozen=True)
class FhnConfig:
    mu: float
    n_x: int = 1024
    dt: float = 5e-4
    T: float = 2.0
    L: float = 1.0
    gamma: float = 2.0
    b: float = 0.5
    probe: float = 0.5
    sample_dt: float = 0.1
    stimulus: Stimulus = field(default_factory=Stimulus)
    reaction: bool = True       # include I_ion
    coupling: bool = True       # include omega in the potential equation
    diffusion: bool = True
    frozen_potential: float = None  # hold nu at this constant (recovery-only runs)
    check_domain: bool = True

    def __post_init__(self):
        if self.check_domain and not MU_DOMAIN[0] <= self.mu <= MU_DOMAIN[1]:
            raise DomainError(f"mu={self.mu} outside {MU_DOMAIN}")
        if self.n_x < 3:
            raise DomainError("need at least 3 spatial nodes")
        if not 0.0 <= self.probe <= self.L:
            raise DomainError("probe outside the cable")
        step_count(self.T, self.dt)
        step_count(self.sample_dt, self.dt)

    @property
    def h(self):
        return self.L / (self.n_x - 1)

    @property
    def probe_index(self):
        return int(round(self.probe / self.h))

    @property
    def probe_offset(self):
        """Distance between the requested probe and the node actually read."""
        return self.probe_index * self.h - self.probe

    @property
    def sample_times(self):
        n = step_count(self.T, self.sample_dt)
        return self.sample_dt * np.arange(1, n + 1)


def advance_recovery(omega, nu, dt, gamma, b):
    """Explicit Euler update of ``omega_t = b nu - gamma omega``."""
    return omega + dt * (b * nu - gamma * omega)


def _diffusion_bands(n, coef):
    """Banded form of ``I - coef * A`` with ``A`` the ghost-node Neumann Laplacian."""
    ab = np.zeros((3, n))
    ab[0, 1:] = -coef
    ab[1, :] = 1.0 + 2.0 * coef
    ab[2, :-1] = -coef
    ab[0, 1] = -2.0 * coef   # row 0 couples to node 1 twice via the ghost node
    ab[2, n - 2] = -2.0 * coef
    return ab


@dataclass
class FhnSolution:
    times: np.ndarray        # sample times
    probe_trace: np.ndarray  # nu at the probe node per sample time
    nu: np.ndarray           # field snapshots per sample time (n_samples x n_x)
    omega: np.ndarray
    probe_offset: float


def fhn_simulate(config, nu0=None, omega0=None):
    """Integrate to ``T`` and return field snapshots at the sample times."""
    c = config
    n, h, dt, mu = c.n_x, c.h, c.dt, c.mu
    n_steps = step_count(c.T, dt)
    every = step_count(c.sample_dt, dt)
    nu = np.zeros(n) if nu0 is None else np.array(nu0, dtype=np.float64)
    omega = np.zeros(n) if omega0 is None else np.array(omega0, dtype=np.float64)
    if c.frozen_potential is not None:
        nu[:] = c.frozen_potential
    coef = dt * mu / h ** 2 if c.diffusion else 0.0
    ab = _diffusion_bands(n, coef)

    snaps_nu, snaps_om = [], []
    for k in range(1, n_steps + 1):
        t_new = k * dt
        if c.frozen_potential is None:
            rhs = nu.copy()
            source = np.zeros(n)
            if c.reaction:
                source += ionic_current(nu)
            if c.coupling:
                source += omega
            rhs -= dt * source / mu
            if c.diffusion:
                # ghost node nu_{-1} = nu_1 + 2 h i0 enters node 0 of the implicit system
                rhs[0] += coef * 2.0 * h * c.stimulus(t_new)
            try:
                nu_new = solve_banded((1, 1), ab, rhs, check_finite=False) if coef else rhs
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"linear solve failed at step {k}: {exc}", step=k) from exc
        else:
            nu_new = nu
        omega = advance_recovery(omega, nu, dt, c.gamma, c.b)
        nu = nu_new
        if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(omega))):
            raise SolverError(f"non-finite state at step {k} (t={t_new:.6g})", step=k)
        if k % every == 0:
            snaps_nu.append(nu.copy())
            snaps_om.append(omega.copy())
    nu_s, om_s = np.array(snaps_nu), np.array(snaps_om)
    return FhnSolution(c.sample_times, nu_s[:, c.probe_index], nu_s, om_s, c.probe_offset)


def fhn_solve(config):
    """Probe trace ``nu(probe, t_n)`` at ``t_n = n * sample_dt``, ``n = 1..N_t``."""
    return fhn_simulate(config).probe_trace


def trapezoid_mean(field_values, L=1.0):
    """Spatial mean with trapezoid weights, conserved by the discrete diffusion."""
    f = np.asarray(field_values)
    h = L / (f.shape[-1] - 1)
    return h * (f[..., 1:-1].sum(axis=-1) + 0.5 * (f[..., 0] + f[..., -1])) / L


HF_GRID = dict(n_x=1024, dt=5e-4)
LF_GRID = dict(n_x=32, dt=5e-3)


def fhn_evaluator(fidelity="HF", **overrides):
    """Vectorized evaluator ``(mu, times) -> probe trace`` on the preset grid."""
    grid = dict(HF_GRID if fidelity == "HF" else LF_GRID)
    grid.update(overrides)

    def evaluate(mu, times):
        cfg = FhnConfig(float(mu), **grid)
        sol = fhn_simulate(cfg)
        idx = np.rint(np.asarray(times) / cfg.sample_dt).astype(int) - 1
        if np.any(idx < 0) or np.any(np.abs((idx + 1) * cfg.sample_dt - times) > 1e-9):
            raise DomainError("requested times are not sample times")
        return sol.probe_trace[idx][:, None]
    return evaluate
