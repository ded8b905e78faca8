"""Experiment configuration: a flat ``key = value`` text format with typed fields.

Lines starting with ``#`` are comments. Network settings are overridden per
model and stage with dotted keys, e.g. ``two-step.HF.lstm = 32,32`` or
``intermediate.alpha = 0.4``. Validation errors carry the dotted path of the
offending field.
"""
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigurationError, ParseError

BENCHMARKS = ("fhn", "lotka-volterra", "oscillator", "custom-csv")
MODEL_NAMES = ("lf-ff", "hf-ff", "three-step-ff", "lf-lstm", "hf-lstm", "two-step", "three-step",
               "intermediate")
SWEEP_MODES = ("both", "hf-only")
QUANTITIES = ("both", "drag", "lift")
STAGE_KEYS = ("lstm", "hidden", "activation", "epochs", "batch_size", "optimizer", "lr", "K", "stride")
MODEL_KEYS = ("alpha", "tap")


class ConfigError(ConfigurationError):
    """Invalid configuration value; ``path`` is the dotted field name."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


def _opt_str(text):
    return None if text.strip().lower() in ("", "none") else text.strip()


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to regenerate the data and retrain every model.

    Unset sampling fields (``None``) take the benchmark defaults from
    :mod:`mflstm.harness.presets`.
    """

    benchmark: str = "lotka-volterra"
    models: tuple = ("lf-lstm", "hf-lstm", "two-step")
    seed: int = 0
    output_dir: str = None
    n_mu_lf: int = None
    n_mu_hf: int = None
    n_mu_test: int = None
    mu_lo: float = None
    mu_hi: float = None
    t0: float = None
    T: float = None
    T_LF: float = None
    T_HF: float = None
    sample_dt: float = None
    solver_dt_lf: float = None
    solver_dt_hf: float = None
    n_x_lf: int = None
    n_x_hf: int = None
    quantity: str = "both"
    test_offset: bool = True
    lf_csv: str = None
    hf_csv: str = None
    test_csv: str = None
    K: int = None
    stride: int = None
    epoch_scale: float = 1.0
    sweep_mode: str = None
    tstar: tuple = ()
    uq_model: str = "two-step"
    uq_members: int = 20
    hpo_model: str = "hf-lstm"
    hpo_method: str = "random"
    hpo_budget: int = 30
    hpo_folds: int = 4
    hpo_epochs: int = 100
    overrides: tuple = ()     # ((model, stage or None, key, raw value), ...)

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ConfigError("benchmark", f"unknown benchmark {self.benchmark!r}, expected one of {BENCHMARKS}")
        if not self.models:
            raise ConfigError("models", "at least one model is required")
        for m in self.models:
            if m not in MODEL_NAMES:
                raise ConfigError("models", f"unknown model {m!r}, expected one of {MODEL_NAMES}")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("models", "duplicate model name")
        for name in ("n_mu_lf", "n_mu_hf", "n_mu_test", "n_x_lf", "n_x_hf", "K", "stride"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(name, "must be a positive integer")
        for name in ("sample_dt", "solver_dt_lf", "solver_dt_hf", "epoch_scale"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(name, "must be positive")
        if self.mu_lo is not None and self.mu_hi is not None and not self.mu_lo < self.mu_hi:
            raise ConfigError("mu_hi", "must exceed mu_lo")
        if self.T_HF is not None and self.T_LF is not None and self.T_HF > self.T_LF:
            raise ConfigError("T_HF", f"T_HF={self.T_HF} exceeds T_LF={self.T_LF}")
        if self.T_LF is not None and self.T is not None and self.T_LF > self.T:
            raise ConfigError("T_LF", f"T_LF={self.T_LF} exceeds T={self.T}")
        if self.T_HF is not None and self.T is not None and self.T_HF > self.T:
            raise ConfigError("T_HF", f"T_HF={self.T_HF} exceeds T={self.T}")
        if self.t0 is not None and self.T is not None and not self.t0 < self.T:
            raise ConfigError("T", "must exceed t0")
        if self.quantity not in QUANTITIES:
            raise ConfigError("quantity", f"expected one of {QUANTITIES}")
        if self.sweep_mode is not None and self.sweep_mode not in SWEEP_MODES:
            raise ConfigError("sweep_mode", f"expected one of {SWEEP_MODES}")
        if self.benchmark == "custom-csv":
            for name in ("lf_csv", "hf_csv", "test_csv"):
                if not getattr(self, name):
                    raise ConfigError(name, "required by the custom-csv benchmark")
        if self.uq_model not in MODEL_NAMES:
            raise ConfigError("uq_model", f"unknown model {self.uq_model!r}")
        if self.uq_members < 2:
            raise ConfigError("uq_members", "an ensemble needs at least two members")
        if self.hpo_model not in MODEL_NAMES:
            raise ConfigError("hpo_model", f"unknown model {self.hpo_model!r}")
        if self.hpo_method not in ("random", "adaptive"):
            raise ConfigError("hpo_method", "expected random or adaptive")
        if self.hpo_budget < 1:
            raise ConfigError("hpo_budget", "must be at least 1")
        if self.hpo_folds < 2:
            raise ConfigError("hpo_folds", "must be at least 2")
        if self.hpo_epochs < 1:
            raise ConfigError("hpo_epochs", "must be at least 1")
        for model, stage, key, raw in self.overrides:
            path = ".".join(p for p in (model, stage, key) if p)
            if model not in MODEL_NAMES:
                raise ConfigError(path, f"unknown model {model!r}")
            if stage is None and key not in MODEL_KEYS:
                raise ConfigError(path, f"unknown model setting {key!r}, expected one of {MODEL_KEYS}")
            if stage is not None and key not in STAGE_KEYS:
                raise ConfigError(path, f"unknown stage setting {key!r}, expected one of {STAGE_KEYS}")

    def to_dict(self):
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "overrides":
                v = [list(o) for o in v]
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["overrides"] = tuple(tuple(o) for o in d.get("overrides", ()))
        for name in ("models", "tstar"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


_PARSERS = {
    "benchmark": str.strip, "models": _names, "seed": int, "output_dir": _opt_str,
    "n_mu_lf": _opt_int, "n_mu_hf": _opt_int, "n_mu_test": _opt_int,
    "mu_lo": _opt_float, "mu_hi": _opt_float, "t0": _opt_float, "T": _opt_float,
    "T_LF": _opt_float, "T_HF": _opt_float, "sample_dt": _opt_float,
    "solver_dt_lf": _opt_float, "solver_dt_hf": _opt_float, "n_x_lf": _opt_int, "n_x_hf": _opt_int,
    "quantity": str.strip, "test_offset": _bool,
    "lf_csv": _opt_str, "hf_csv": _opt_str, "test_csv": _opt_str,
    "K": _opt_int, "stride": _opt_int, "epoch_scale": float,
    "sweep_mode": _opt_str, "tstar": _floats,
    "uq_model": str.strip, "uq_members": int,
    "hpo_model": str.strip, "hpo_method": str.strip, "hpo_budget": int, "hpo_folds": int,
    "hpo_epochs": int,
}

STAGE_PARSERS = {
    "lstm": _ints, "hidden": _ints, "activation": str.strip, "epochs": int, "batch_size": int,
    "optimizer": str.strip, "lr": float, "K": _opt_int, "stride": _opt_int,
}
MODEL_PARSERS = {"alpha": float, "tap": int}


def _override(key, raw):
    parts = key.split(".")
    if len(parts) == 2:
        model, stage, name = parts[0], None, parts[1]
        parser = MODEL_PARSERS.get(name)
    elif len(parts) == 3:
        model, stage, name = parts
        parser = STAGE_PARSERS.get(name)
    else:
        raise ConfigError(key, "expected model.setting or model.stage.setting")
    if parser is not None:
        try:
            parser(raw)
        except ValueError as exc:
            raise ConfigError(key, f"invalid value {raw!r}: {exc}") from None
    return (model, stage, name, raw.strip())


def parse_pairs(pairs, base=None):
    """Apply ``(key, raw value)`` pairs on top of ``base`` (or the defaults)."""
    values = {}
    overrides = list(base.overrides) if base is not None else []
    for key, raw in pairs:
        if "." in key:
            ov = _override(key, raw)
            overrides = [o for o in overrides if o[:3] != ov[:3]] + [ov]
            continue
        if key not in _PARSERS or key == "overrides":
            raise ConfigError(key, "unknown configuration key")
        try:
            values[key] = _PARSERS[key](raw)
        except ValueError as exc:
            raise ConfigError(key, f"invalid value {raw!r}: {exc}") from None
    values["overrides"] = tuple(overrides)
    if base is None:
        return ExperimentConfig(**values)
    return replace(base, **values)


def split_line(line, lineno):
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    if "=" not in text:
        raise ParseError("expected key = value", line=lineno)
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ParseError("missing key", line=lineno)
    return key, raw.strip()


def parse_config(text, base=None):
    pairs = []
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        kv = split_line(line, lineno)
        if kv is None:
            continue
        if kv[0] in seen:
            raise ParseError(f"duplicate key {kv[0]!r} (first set on line {seen[kv[0]]})", line=lineno)
        seen[kv[0]] = lineno
        pairs.append(kv)
    return parse_pairs(pairs, base)


def load_config(path, base=None):
    return parse_config(Path(path).read_text(), base)


def format_config(config):
    """Inverse of :func:`parse_config` for every non-default field."""
    default = ExperimentConfig()
    lines = []
    for f in fields(config):
        if f.name == "overrides":
            continue
        v = getattr(config, f.name)
        if v == getattr(default, f.name):
            continue
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    for model, stage, key, raw in config.overrides:
        lines.append(f"{'.'.join(p for p in (model, stage, key) if p)} = {raw}")
    return "\n".join(lines) + "\n"
