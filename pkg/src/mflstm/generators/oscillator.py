"""Synthetic drag/lift-like oscillator with a controllable low-fidelity distortion.

The lift-like output oscillates at ``omega(mu)`` about zero; the drag-like
output oscillates at ``2 omega(mu)`` about a positive mean. The LF variant
uses the same family with amplitude, frequency, phase and offset errors that
grow linearly from zero at ``mu = MU_ANCHOR``.
"""
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError

MU_DOMAIN = (70.0, 160.0)
MU_ANCHOR = 70.0
T_WINDOW = (14.5, 15.0)
N_STEPS = 26
T_REF = T_WINDOW[0]            # phases are measured from the window start

# HF family: value = lo + (hi - lo) * s, with s = (mu - 70) / 90 in [0, 1]
OMEGA = (16.0, 22.0)           # lift angular frequency; drag runs at twice this
LIFT_AMPLITUDE = (0.35, 0.9)
DRAG_MEAN = (3.25, 3.05)
DRAG_AMPLITUDE = (0.012, 0.045)
PHASE = (0.2, 8.2)             # shedding phase accumulated by the window start

# LF errors at s = 1 (zero at the anchor)
AMPLITUDE_BIAS = 0.25          # multiplicative: amplitude * (1 + AMPLITUDE_BIAS * s)
FREQUENCY_ERROR = -0.06        # omega * (1 + FREQUENCY_ERROR * s)
PHASE_SHIFT = 0.5              # radians
OFFSET_BIAS = 0.08             # additive shift of the drag mean


def _lerp(pair, s):
    return pair[0] + (pair[1] - pair[0]) * s


@dataclass(frozen=True)
class OscillatorConfig:
    fidelity: str = "HF"
    amplitude_bias: float = AMPLITUDE_BIAS
    frequency_error: float = FREQUENCY_ERROR
    phase_shift: float = PHASE_SHIFT
    offset_bias: float = OFFSET_BIAS

    def __post_init__(self):
        if self.fidelity not in ("HF", "LF"):
            raise DomainError(f"unknown fidelity {self.fidelity!r}")


def oscillator_terms(mu, config):
    """``(drag mean, drag amplitude, lift amplitude, omega, phase)`` for one ``mu``."""
    s = (mu - MU_ANCHOR) / (MU_DOMAIN[1] - MU_DOMAIN[0])
    drag_mean, drag_amp = _lerp(DRAG_MEAN, s), _lerp(DRAG_AMPLITUDE, s)
    lift_amp, omega, phase = _lerp(LIFT_AMPLITUDE, s), _lerp(OMEGA, s), _lerp(PHASE, s)
    if config.fidelity == "LF":
        drag_mean += config.offset_bias * s
        drag_amp *= 1.0 + config.amplitude_bias * s
        lift_amp *= 1.0 + config.amplitude_bias * s
        omega *= 1.0 + config.frequency_error * s
        phase += config.phase_shift * s
    return drag_mean, drag_amp, lift_amp, omega, phase


def oscillator_eval(config, mu, t):
    """Drag-like and lift-like values at times ``t``; returns an array ``(..., 2)``."""
    if not MU_DOMAIN[0] <= mu <= MU_DOMAIN[1]:
        raise DomainError(f"mu={mu} outside {MU_DOMAIN}")
    t = np.asarray(t, dtype=np.float64)
    drag_mean, drag_amp, lift_amp, omega, phase = oscillator_terms(mu, config)
    arg = omega * (t - T_REF) + phase
    drag = drag_mean + drag_amp * np.sin(2.0 * arg)
    lift = lift_amp * np.sin(arg)
    return np.stack([drag, lift], axis=-1)


def window_times(n_steps=N_STEPS, window=T_WINDOW):
    return np.linspace(window[0], window[1], n_steps)


def oscillator_evaluator(fidelity="HF"):
    """Vectorized evaluator ``(mu, times) -> (drag, lift)`` for dataset building."""
    config = OscillatorConfig(fidelity)
    return lambda mu, times: oscillator_eval(config, float(mu), times)
