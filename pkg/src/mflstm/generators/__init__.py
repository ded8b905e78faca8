"""Two-fidelity data generators for the benchmark problems."""
from .fhn import (
    FhnConfig,
    FhnSolution,
    Stimulus,
    advance_recovery,
    fhn_evaluator,
    fhn_simulate,
    fhn_solve,
    ionic_current,
    trapezoid_mean,
)
from .lotka_volterra import (
    LotkaVolterraConfig,
    integrate_rk2,
    lv_evaluator,
    lv_rhs,
    lv_trajectory,
)
from .oscillator import OscillatorConfig, oscillator_eval, oscillator_evaluator, window_times
