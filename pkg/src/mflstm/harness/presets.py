"""Benchmark defaults: sampling grids and per-model network settings.

Architectures, optimizers, learning rates and batch sizes follow published
tuned values for each benchmark; epoch counts and window strides are chosen
so that every benchmark trains in minutes on one CPU core.
"""
from dataclasses import replace

from ..models import StagePlan
from ..nn import TrainConfig
from .config import ConfigError, MODEL_PARSERS, STAGE_PARSERS

# sampling defaults per benchmark
SAMPLING = {
    "lotka-volterra": dict(n_mu_lf=20, n_mu_hf=10, n_mu_test=30, mu_lo=1.0, mu_hi=3.0, t0=0.0,
                           T=15.0, T_LF=15.0, T_HF=10.0, sample_dt=0.25, solver_dt_lf=0.25,
                           solver_dt_hf=0.0025, K=25, stride=5, sweep_mode="hf-only"),
    "fhn": dict(n_mu_lf=25, n_mu_hf=4, n_mu_test=18, mu_lo=0.005, mu_hi=0.05, t0=0.1, T=2.0,
                T_LF=2.0, T_HF=2.0, sample_dt=0.1, solver_dt_lf=5e-3, solver_dt_hf=5e-4,
                n_x_lf=32, n_x_hf=1024, K=20, stride=20, sweep_mode="both"),
    "oscillator": dict(n_mu_lf=19, n_mu_hf=10, n_mu_test=19, mu_lo=70.0, mu_hi=160.0, t0=14.5,
                       T=15.0, T_LF=15.0, T_HF=15.0, sample_dt=0.02, K=26, stride=26,
                       sweep_mode="both"),
    "custom-csv": dict(sweep_mode="both"),
}


def _plan(lstm, hidden, optimizer, lr, batch, epochs, activation="tanh"):
    return StagePlan(tuple(lstm), tuple(hidden), activation,
                     TrainConfig(epochs=epochs, batch_size=batch, optimizer=optimizer, lr=lr))


def _lin(hidden, optimizer, lr, batch, epochs):
    return _plan((), hidden, optimizer, lr, batch, epochs, activation="identity")


# model -> {"stages": {role: plan}, "alpha": ..., "tap": ...}
def _fhn():
    lf_lstm = _plan((98,), (), "adam", 7.14e-3, 1, 300)
    lf_ff = _plan((), (61,) * 4, "adam", 2.54e-2, 13, 300)
    return {
        "lf-ff": {"stages": {"LF": lf_ff}},
        "hf-ff": {"stages": {"HF": _plan((), (52,) * 3, "adam", 1.98e-2, 3, 600)}},
        "three-step-ff": {"stages": {"LF": lf_ff, "Lin": _lin((41,) * 3, "adamax", 3.89e-3, 67, 600),
                                     "HF": _plan((), (32,), "adam", 1.78e-4, 151, 600)}},
        "lf-lstm": {"stages": {"LF": lf_lstm}},
        "hf-lstm": {"stages": {"HF": _plan((94, 94), (), "adamax", 2.94e-2, 4, 600)}},
        "two-step": {"stages": {"LF": lf_lstm, "HF": _plan((98, 98), (16, 16), "adamax", 1.78e-3, 3, 600)}},
        "three-step": {"stages": {"LF": lf_lstm, "Lin": _lin((), "adam", 1.8e-2, 3, 600),
                                  "HF": _plan((82,) * 3, (20,) * 3, "adamax", 6.98e-3, 4, 600)}},
        "intermediate": {"stages": {"net": _plan((62, 62, 62, 72, 72), (118,), "adam", 3.81e-4, 27, 300)},
                         "alpha": 0.51, "tap": 2},
    }


def _lotka_volterra():
    def net(lr=1e-3, batch=50, epochs=3000):
        return _plan((64,) * 3, (32,), "adamax", lr, batch, epochs)

    lf = net()
    return {
        "lf-ff": {"stages": {"LF": _plan((), (64,) * 3, "adamax", 1e-3, 50, 3000)}},
        "hf-ff": {"stages": {"HF": _plan((), (64,) * 3, "adamax", 1e-3, 50, 3000)}},
        "three-step-ff": {"stages": {"LF": _plan((), (64,) * 3, "adamax", 1e-3, 50, 3000),
                                     "Lin": _lin((), "adamax", 1e-3, 50, 3000),
                                     "HF": _plan((), (64,) * 3, "adamax", 1e-3, 50, 3000)}},
        "lf-lstm": {"stages": {"LF": lf}},
        "hf-lstm": {"stages": {"HF": net()}},
        "two-step": {"stages": {"LF": lf, "HF": net(5e-3, 100)}},
        "three-step": {"stages": {"LF": lf, "Lin": _lin((), "adamax", 1e-3, 50, 3000), "HF": net()}},
        "intermediate": {"stages": {"net": _plan((64,) * 6, (32,), "adamax", 1e-3, 50, 3000)},
                         "alpha": 0.5, "tap": 2},
    }


def _oscillator():
    lf_lstm = _plan((128,) * 4, (46,), "adam", 1.96e-3, 1, 100)
    lf_ff = _plan((), (128,) * 4, "adam", 1.96e-3, 1, 100)
    return {
        "lf-ff": {"stages": {"LF": lf_ff}},
        "hf-ff": {"stages": {"HF": _plan((), (24,) * 4, "adamax", 5.46e-2, 6, 400)}},
        "three-step-ff": {"stages": {"LF": lf_ff, "Lin": _lin((), "adamax", 1.17e-2, 6, 400),
                                     "HF": _plan((), (24,) * 4, "adamax", 6.2e-4, 8, 400)}},
        "lf-lstm": {"stages": {"LF": lf_lstm}},
        "hf-lstm": {"stages": {"HF": _plan((24,) * 4, (), "adamax", 5.46e-2, 6, 400)}},
        "two-step": {"stages": {"LF": lf_lstm, "HF": _plan((64,) * 3, (26, 26), "adam", 2.66e-3, 5, 400)}},
        "three-step": {"stages": {"LF": lf_lstm, "Lin": _lin((), "adamax", 1.17e-2, 6, 400),
                                  "HF": _plan((24,) * 4, (), "adamax", 6.2e-4, 8, 400)}},
        "intermediate": {"stages": {"net": _plan((106, 20, 20, 20), (), "adam", 2.65e-2, 16, 200)},
                         "alpha": 0.64, "tap": 0},
    }


PRESETS = {"fhn": _fhn, "lotka-volterra": _lotka_volterra, "oscillator": _oscillator,
           "custom-csv": _lotka_volterra}

ROLES = {
    "lf-ff": ("LF",), "hf-ff": ("HF",), "lf-lstm": ("LF",), "hf-lstm": ("HF",),
    "two-step": ("LF", "HF"), "three-step": ("LF", "Lin", "HF"), "three-step-ff": ("LF", "Lin", "HF"),
    "intermediate": ("net",),
}


def sampling(config):
    """Config with every unset sampling field filled from the benchmark defaults."""
    defaults = SAMPLING[config.benchmark]
    values = {k: v for k, v in defaults.items() if getattr(config, k) is None}
    return replace(config, **values)


def _apply_stage(plan, key, raw, path):
    value = STAGE_PARSERS[key](raw)
    if key in ("lstm", "hidden", "activation", "K", "stride"):
        return replace(plan, **{key: value})
    try:
        return replace(plan, train=replace(plan.train, **{key: value}))
    except Exception as exc:
        raise ConfigError(path, str(exc)) from None


def model_settings(config, name):
    """Stage plans (with windowing and epoch scaling applied) for model ``name``."""
    entry = PRESETS[config.benchmark]()[name]
    cfg = sampling(config)
    stages = dict(entry["stages"])
    extra = {k: v for k, v in entry.items() if k != "stages"}
    for role, plan in stages.items():
        epochs = max(1, int(round(plan.train.epochs * cfg.epoch_scale)))
        stages[role] = replace(plan, K=cfg.K, stride=cfg.stride, train=replace(plan.train, epochs=epochs))
    for model, stage, key, raw in config.overrides:
        if model != name:
            continue
        path = ".".join(p for p in (model, stage, key) if p)
        if stage is None:
            extra[key] = MODEL_PARSERS[key](raw)
            continue
        if stage not in stages:
            raise ConfigError(path, f"model {name!r} has stages {sorted(stages)}")
        stages[stage] = _apply_stage(stages[stage], key, raw, path)
    for role, plan in stages.items():
        try:
            plan.spec(2, 1)
        except Exception as exc:
            raise ConfigError(f"{name}.{role}", str(exc)) from None
    if name in ("three-step", "three-step-ff"):
        lin = stages["Lin"]
        if lin.lstm or lin.activation != "identity":
            raise ConfigError(f"{name}.Lin", "the linear-correction network must be dense with identity activations")
    if name == "intermediate":
        if not 0.0 <= extra["alpha"] <= 1.0:
            raise ConfigError("intermediate.alpha", "must lie in [0, 1]")
        if not 0 <= extra["tap"] < len(stages["net"].lstm):
            raise ConfigError("intermediate.tap", "must index an LSTM layer of the network")
    return stages, extra
