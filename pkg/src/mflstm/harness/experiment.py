"""Experiment engine: data generation, model comparison, error grids,
time-extrapolation sweeps and ensemble bands."""
from dataclasses import dataclass, field, replace

import numpy as np

from .. import __version__
from ..datasets import build_grid_dataset, load_csv, test_mse
from ..errors import DomainError, MflstmError
from ..generators import fhn_evaluator, lv_evaluator, oscillator_evaluator
from ..models import (
    ensemble_uq,
    predict_dataset,
    train_intermediate,
    train_single,
    train_three_step,
    train_two_step,
)
from .config import ConfigError
from .presets import model_settings, sampling

REPORT_FORMAT = "mflstm.report/1"
TEST_FIDELITY = "test"


# -- data ------------------------------------------------------------------

@dataclass
class BenchmarkData:
    lf: object
    hf: object
    test: object

    def digests(self):
        return {"lf": self.lf.digest(), "hf": self.hf.digest(), "test": self.test.digest()}


def time_grid(t0, t_end, dt):
    n = int(round((t_end - t0) / dt))
    if n < 1 or abs(t0 + n * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ConfigError("sample_dt", f"[{t0}, {t_end}] is not a whole number of steps of {dt}")
    return t0 + dt * np.arange(n + 1)


def parameter_grid(lo, hi, n, offset=False):
    """``n`` uniform values over ``[lo, hi]``, or the midpoints of ``n`` equal
    cells when ``offset`` is set (so test values avoid the training grids)."""
    if offset:
        return lo + (np.arange(n) + 0.5) * (hi - lo) / n
    return np.linspace(lo, hi, n) if n > 1 else np.array([0.5 * (lo + hi)])


def _select(evaluator, columns):
    if columns is None:
        return evaluator
    return lambda mu, times: np.asarray(evaluator(mu, times))[:, columns]


def _evaluators(cfg):
    if cfg.benchmark == "lotka-volterra":
        return (lambda t_end: lv_evaluator(cfg.solver_dt_lf, t_end),
                lambda t_end: lv_evaluator(cfg.solver_dt_hf, t_end))
    if cfg.benchmark == "fhn":
        def lf(t_end):
            return fhn_evaluator("LF", n_x=cfg.n_x_lf, dt=cfg.solver_dt_lf, T=t_end, sample_dt=cfg.sample_dt)

        def hf(t_end):
            return fhn_evaluator("HF", n_x=cfg.n_x_hf, dt=cfg.solver_dt_hf, T=t_end, sample_dt=cfg.sample_dt)
        return lf, hf
    cols = {"both": None, "drag": [0], "lift": [1]}[cfg.quantity]
    return (lambda t_end: _select(oscillator_evaluator("LF"), cols),
            lambda t_end: _select(oscillator_evaluator("HF"), cols))


def build_data(config):
    """Training and test datasets for ``config``; test sets carry the
    fidelity tag ``"test"`` so they cannot enter training."""
    cfg = sampling(config)
    if cfg.benchmark == "custom-csv":
        lf, hf, test = (load_csv(p) for p in (cfg.lf_csv, cfg.hf_csv, cfg.test_csv))
        return BenchmarkData(lf, hf, replace(test, fidelity=TEST_FIDELITY))
    domain = [[cfg.mu_lo, cfg.mu_hi]]
    lf_eval, hf_eval = _evaluators(cfg)

    def make(n, t_end, evaluator, fidelity, offset=False):
        mu = parameter_grid(cfg.mu_lo, cfg.mu_hi, n, offset)
        return build_grid_dataset(mu, time_grid(cfg.t0, t_end, cfg.sample_dt), evaluator(t_end), fidelity,
                                  domain=domain, T=cfg.T, vectorized=True)

    lf = make(cfg.n_mu_lf, cfg.T_LF, lf_eval, "LF")
    hf = make(cfg.n_mu_hf, cfg.T_HF, hf_eval, "HF")
    test = make(cfg.n_mu_test, cfg.T, hf_eval, TEST_FIDELITY, cfg.test_offset)
    return BenchmarkData(lf, hf, test)


def generate(config, fidelity):
    data = build_data(config)
    return {"lf": data.lf, "hf": data.hf, "test": data.test}[fidelity]


# -- models ----------------------------------------------------------------

def final_dataset(name, lf, hf):
    return lf if name in ("lf-ff", "lf-lstm") else hf


def train_named(config, name, lf, hf, seed, lf_cache=None):
    """Train model ``name`` on ``lf``/``hf``. ``lf_cache`` shares identical LF
    stages between models (same plan, data and seed give the same weights)."""
    for d in (lf, hf):
        if d.fidelity == TEST_FIDELITY:
            raise ConfigError("models", "test data cannot be used for training")
    stages, extra = model_settings(config, name)
    inputs = [lf, hf]

    def lf_model():
        plan = stages["LF"]
        key = (repr(plan), lf.digest(), hf.digest(), seed)
        if lf_cache is not None and key in lf_cache:
            return lf_cache[key]
        model = train_single(plan, lf, seed, input_datasets=inputs, role="LF")
        if lf_cache is not None:
            lf_cache[key] = model
        return model

    if name in ("lf-ff", "lf-lstm"):
        return lf_model()
    if name in ("hf-ff", "hf-lstm"):
        return train_single(stages["HF"], hf, seed, input_datasets=inputs, role="HF")
    if name == "two-step":
        return train_two_step(lf, hf, stages["LF"], stages["HF"], seed, lf_stage=lf_model().stages[0])
    if name in ("three-step", "three-step-ff"):
        return train_three_step(lf, hf, stages["LF"], stages["HF"], stages["Lin"], seed, lf_stage=lf_model().stages[0])
    return train_intermediate(lf, hf, stages["net"], extra["alpha"], extra["tap"], seed)


def error_grid(model, test):
    """Absolute error per ``(mu, t)``; the Euclidean norm over outputs when
    there are several."""
    diff = predict_dataset(model, test) - test.y
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass
class ModelResult:
    name: str
    status: str = "ok"          # "ok" or "failed"
    mse: float = None
    stage: str = None           # failing pipeline stage
    cause: str = None
    grid: np.ndarray = None
    model: object = None

    def summary(self):
        out = {"status": self.status, "mse": self.mse}
        if self.status != "ok":
            out.update(stage=self.stage, cause=self.cause)
        else:
            out["stage_seeds"] = {s.role: s.seed for s in self.model.stages}
        return out


@dataclass
class SweepPoint:
    tstar: float
    mse: float = None
    status: str = "ok"
    cause: str = None


@dataclass
class UqPoint:
    tstar: float
    n_members: int
    mse_mean: float = None
    mse_std: float = None
    status: str = "ok"
    cause: str = None
    mean: np.ndarray = None      # prediction band on the test grid
    std: np.ndarray = None


@dataclass
class ExperimentReport:
    config: object
    data: BenchmarkData
    results: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    uq: dict = field(default_factory=dict)

    @property
    def partial(self):
        bad = any(r.status != "ok" for r in self.results.values())
        bad |= any(p.status != "ok" for pts in self.sweep.values() for p in pts)
        bad |= any(p.status != "ok" for pts in self.uq.values() for p in pts)
        return bad

    def mse_table(self):
        return [(n, r.mse, r.status) for n, r in self.results.items()]

    def provenance(self):
        return {
            "format": REPORT_FORMAT,
            "package_version": __version__,
            "config": self.config.to_dict(),
            "resolved_config": sampling(self.config).to_dict(),
            "datasets": self.data.digests(),
            "seed": self.config.seed,
        }

    def to_dict(self):
        doc = {
            "format": REPORT_FORMAT,
            "benchmark": self.config.benchmark,
            "partial": self.partial,
            "models": {n: r.summary() for n, r in self.results.items()},
        }
        if self.sweep:
            doc["sweep"] = {n: [vars(p) for p in pts] for n, pts in self.sweep.items()}
        if self.uq:
            doc["uq"] = {n: [{k: v for k, v in vars(p).items() if k not in ("mean", "std")} for p in pts]
                         for n, pts in self.uq.items()}
        return doc


def _describe(exc):
    return f"{type(exc).__name__}: {exc}"


def evaluate_named(config, name, lf, hf, test, seed, lf_cache=None):
    res = ModelResult(name)
    try:
        res.model = train_named(config, name, lf, hf, seed, lf_cache)
    except (MflstmError, FloatingPointError) as exc:
        if isinstance(exc, ConfigError):
            raise
        res.status, res.stage, res.cause = "failed", "train", _describe(exc)
        return res
    try:
        res.grid = error_grid(res.model, test)
        res.mse = test_mse(predict_dataset(res.model, test), test.y)
        if not np.isfinite(res.mse):
            raise DomainError("non-finite test error")
    except MflstmError as exc:
        res.status, res.stage, res.cause = "failed", "evaluate", _describe(exc)
    return res


def run_comparison(config, data=None):
    """Train every requested model on the training data and score it on the
    test set. Failures are recorded per model and mark the report partial."""
    data = data or build_data(config)
    report = ExperimentReport(config, data)
    cache = {}
    for name in config.models:
        report.results[name] = evaluate_named(config, name, data.lf, data.hf, data.test, config.seed, cache)
    return report


# -- extrapolation sweep ---------------------------------------------------

def truncate_training(data, tstar, mode):
    """Training sets restricted to ``t <= tstar``; ``mode`` is ``"both"`` or
    ``"hf-only"`` (the LF data keep their full time range)."""
    lf = data.lf.truncate(tstar) if mode == "both" else data.lf
    hf = data.hf.truncate(tstar)
    for d in (lf, hf):
        if d.n_t < 2:
            raise DomainError(f"t*={tstar} leaves fewer than two {d.fidelity} time steps")
    return lf, hf


def _check_tstars(tstars, data):
    t0, T = data.test.times[0], data.test.times[-1]
    if not tstars:
        raise ConfigError("tstar", "no t* values given")
    for ts in tstars:
        if not t0 < ts <= T + 1e-12:
            raise DomainError(f"t*={ts} outside ({t0}, {T}]")


def extrapolation_sweep(config, tstars=None, data=None):
    """Per model, the test MSE on the full window after training on
    ``t <= t*`` for each ``t*``. Every requested point is reported; points
    whose training fails are flagged."""
    cfg = sampling(config)
    data = data or build_data(config)
    tstars = tuple(tstars if tstars is not None else config.tstar)
    _check_tstars(tstars, data)
    truncated = [truncate_training(data, ts, cfg.sweep_mode) for ts in tstars]
    report = ExperimentReport(config, data)
    for name in config.models:
        report.sweep[name] = []
    for ts, (lf, hf) in zip(tstars, truncated):
        cache = {}
        for name in config.models:
            res = evaluate_named(config, name, lf, hf, data.test, config.seed, cache)
            report.sweep[name].append(SweepPoint(float(ts), res.mse, res.status, res.cause))
    return report


# -- ensembles -------------------------------------------------------------

def run_uq(config, name=None, n_members=None, tstars=None, data=None):
    """Ensemble of retrained final networks for each ``t*`` (default: ``T``).

    The base model is trained once per ``t*``; its final network is then
    retrained ``n_members`` times with derived seeds and scored on the test set.
    """
    cfg = sampling(config)
    name = name or config.uq_model
    n_members = n_members or config.uq_members
    data = data or build_data(config)
    tstars = tuple(tstars if tstars is not None else (config.tstar or (float(data.test.times[-1]),)))
    _check_tstars(tstars, data)
    report = ExperimentReport(config, data)
    points = []
    for ts in tstars:
        lf, hf = truncate_training(data, ts, cfg.sweep_mode)
        pt = UqPoint(float(ts), n_members)
        try:
            base = train_named(config, name, lf, hf, config.seed)
            ens = ensemble_uq(base, final_dataset(name, lf, hf), n_members, seed=config.seed,
                              test_dataset=data.test, lf_dataset=lf)
            pt.mse_mean, pt.mse_std, pt.mean, pt.std = ens.mse_mean, ens.mse_std, ens.mean, ens.std
        except MflstmError as exc:
            if isinstance(exc, ConfigError):
                raise
            pt.status, pt.cause = "failed", _describe(exc)
        points.append(pt)
    report.uq[name] = points
    return report


def rerun(provenance):
    """Rebuild the comparison recorded in ``provenance``."""
    from .config import ExperimentConfig
    return run_comparison(ExperimentConfig.from_dict(provenance["config"]))
