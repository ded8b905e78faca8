"""Hyperparameter search over network architecture and optimizer settings.

The objective is a cross-validated training error: parameter instances of the
scarcest fidelity are split into folds, each fold is held out once, and the
held-out MSE is averaged. Two searchers are provided: plain random search and
a two-phase adaptive search that refines around the best trials so far.
"""
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .datasets import fit_input_scaler, test_mse
from .errors import ConfigurationError, NumericError, SearchFailed, TrainingDiverged
from .models import StagePlan, predict_dataset, train_intermediate, train_single, train_three_step, \
    train_two_step
from .nn import TrainConfig

OPTIMIZERS = ("adam", "adamax")
TUNABLE_KINDS = ("single", "two-step", "three-step", "intermediate")


@dataclass(frozen=True)
class HyperPoint:
    """One point of the search space. Widths are shared by all layers of a block."""

    lstm_depth: int
    lstm_width: int
    dense_depth: int
    dense_width: int
    batch_size: int
    optimizer: str
    lr: float
    alpha: float = None

    @property
    def lstm(self):
        return (self.lstm_width,) * self.lstm_depth

    @property
    def hidden(self):
        return (self.dense_width,) * self.dense_depth

    def plan(self, epochs, K=None, stride=None, activation="tanh", seed=0):
        cfg = TrainConfig(epochs=epochs, batch_size=self.batch_size, optimizer=self.optimizer,
                          lr=self.lr, seed=seed)
        return StagePlan(self.lstm, self.hidden, activation, cfg, K, stride)

    def to_dict(self):
        return asdict(self)


POINT_FIELDS = [f.name for f in fields(HyperPoint)]


@dataclass(frozen=True)
class HyperSpace:
    """Box of admissible hyperparameters; integer bounds are inclusive.

    ``alpha=None`` removes the loss weight from the space (every model kind
    except the intermediate one).
    """

    lstm_depth: tuple = (0, 4)
    lstm_width: tuple = (16, 128)
    dense_depth: tuple = (0, 4)
    dense_width: tuple = (16, 128)
    batch_size: tuple = (1, 256)
    optimizers: tuple = OPTIMIZERS
    lr: tuple = (1e-4, 1e-1)
    alpha: tuple = None

    INT_FIELDS = ("lstm_depth", "lstm_width", "dense_depth", "dense_width", "batch_size")

    def __post_init__(self):
        for name in self.INT_FIELDS:
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0 or (name != "lstm_depth" and name != "dense_depth" and lo < 1):
                raise ConfigurationError(f"invalid range for {name}: {(lo, hi)}")
        if not self.optimizers or any(o not in OPTIMIZERS for o in self.optimizers):
            raise ConfigurationError(f"optimizers must be drawn from {OPTIMIZERS}")
        if not 0 < self.lr[0] <= self.lr[1]:
            raise ConfigurationError(f"invalid learning-rate range {self.lr}")
        if self.alpha is not None and not 0.0 <= self.alpha[0] <= self.alpha[1] <= 1.0:
            raise ConfigurationError(f"invalid alpha range {self.alpha}")

    @classmethod
    def single_point(cls, point):
        """Degenerate space containing only ``point``."""
        a = None if point.alpha is None else (point.alpha, point.alpha)
        return cls(*[(getattr(point, n),) * 2 for n in cls.INT_FIELDS],
                   optimizers=(point.optimizer,), lr=(point.lr, point.lr), alpha=a)

    def sample(self, rng):
        """Independent draw from the priors (uniform integers, log-uniform lr)."""
        ints = {n: int(rng.integers(getattr(self, n)[0], getattr(self, n)[1] + 1))
                for n in self.INT_FIELDS}
        opt = self.optimizers[int(rng.integers(len(self.optimizers)))]
        lo, hi = np.log(self.lr)
        lr = float(np.exp(rng.uniform(lo, hi))) if hi > lo else float(self.lr[0])
        alpha = None if self.alpha is None else float(rng.uniform(*self.alpha))
        return HyperPoint(optimizer=opt, lr=lr, alpha=alpha, **ints)

    def perturb(self, point, rng, scale=0.15):
        """Draw near ``point``: Gaussian steps of ``scale`` times each range
        (in log space for the learning rate), clipped to the box."""
        ints = {}
        for n in self.INT_FIELDS:
            lo, hi = getattr(self, n)
            v = getattr(point, n) + rng.normal() * scale * (hi - lo)
            ints[n] = int(np.clip(np.rint(v), lo, hi))
        opt = point.optimizer
        if len(self.optimizers) > 1 and rng.uniform() < scale:
            opt = self.optimizers[int(rng.integers(len(self.optimizers)))]
        lo, hi = np.log(self.lr)
        lr = float(np.exp(np.clip(np.log(point.lr) + rng.normal() * scale * (hi - lo), lo, hi)))
        if hi == lo:
            lr = float(self.lr[0])   # exp(log(x)) need not round-trip
        alpha = None
        if self.alpha is not None:
            a_lo, a_hi = self.alpha
            alpha = float(np.clip(point.alpha + rng.normal() * scale * (a_hi - a_lo), a_lo, a_hi))
        return HyperPoint(optimizer=opt, lr=lr, alpha=alpha, **ints)

    def contains(self, point):
        for n in self.INT_FIELDS:
            lo, hi = getattr(self, n)
            if not lo <= getattr(point, n) <= hi:
                return False
        if point.optimizer not in self.optimizers:
            return False
        if not self.lr[0] * (1 - 1e-12) <= point.lr <= self.lr[1] * (1 + 1e-12):
            return False
        if self.alpha is None:
            return point.alpha is None
        return point.alpha is not None and self.alpha[0] <= point.alpha <= self.alpha[1]


@dataclass
class TrialRecord:
    index: int
    point: HyperPoint
    objective: float
    status: str          # "ok" or "failed"
    seed: int
    n_params: int
    wall_time: float = 0.0

    @property
    def failed(self):
        return self.status != "ok"


# -- cross-validated objective --------------------------------------------

@dataclass(frozen=True)
class TrainingSets:
    """Training data visible to the objective. Test datasets (fidelity tag
    ``"test"``) are rejected so the search can never read them."""

    hf: object
    lf: object = None

    def __post_init__(self):
        for d in (self.hf, self.lf):
            if d is not None and d.fidelity == "test":
                raise ConfigurationError("cross-validation accepts training datasets only")

    def scarcest(self):
        if self.lf is None or self.hf.n_mu <= self.lf.n_mu:
            return "hf"
        return "lf"


def fold_indices(n, folds):
    """Interleaved split of ``n`` parameter instances (sorted as given) into
    ``folds`` held-out sets, so every fold spans the parameter range."""
    if folds < 2:
        raise ConfigurationError("need at least two folds")
    if folds > n:
        raise ConfigurationError(f"{folds} folds but only {n} parameter instances")
    idx = np.arange(n)
    return [idx[f::folds] for f in range(folds)]


@dataclass
class CvObjective:
    """Cross-validated held-out MSE of one model kind.

    The hyper point configures the network being tuned: the only network for
    ``single``, the HF network for ``two-step`` and ``three-step`` (the LF
    network follows ``lf_plan``), and the whole network for ``intermediate``
    (whose ``alpha`` comes from the point). Folds partition the parameter
    instances of the scarcest fidelity; the other fidelity is always used in
    full.
    """

    data: TrainingSets
    kind: str = "single"
    folds: int = 4
    epochs: int = 200
    K: int = None
    stride: int = None
    seed: int = 0
    lf_plan: StagePlan = None
    activation: str = "tanh"
    _lf_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in TUNABLE_KINDS:
            raise ConfigurationError(f"cannot tune model kind {self.kind!r}")
        if self.kind != "single" and (self.data.lf is None):
            raise ConfigurationError(f"{self.kind} needs LF training data")
        if self.kind in ("two-step", "three-step") and self.lf_plan is None:
            raise ConfigurationError(f"{self.kind} needs a plan for the LF network")
        fold_indices(getattr(self.data, self._fold_fidelity()).n_mu, self.folds)

    def _fold_fidelity(self):
        return "hf" if self.kind == "single" else self.data.scarcest()

    def n_params(self, point):
        hf = self.data.hf
        extra = {"single": 0, "intermediate": 0, "two-step": hf.p_out, "three-step": 2 * hf.p_out}
        spec = point.plan(1, activation=self.activation).spec(hf.p_in + extra[self.kind], hf.p_out)
        return spec.n_params()

    def _lf_stage(self, lf, hf):
        scaler = fit_input_scaler([lf, hf])
        key = (scaler.lo.tobytes(), scaler.hi.tobytes())
        if key not in self._lf_cache:
            m = train_single(self.lf_plan, lf, self.seed, input_datasets=[lf, hf], role="LF")
            self._lf_cache[key] = m.stages[0]
        return self._lf_cache[key]

    def _fit(self, point, lf, hf):
        plan = point.plan(self.epochs, self.K, self.stride, self.activation)
        if self.kind == "single":
            return train_single(plan, hf, self.seed)
        if self.kind == "intermediate":
            if point.alpha is None:
                raise ConfigurationError("intermediate tuning needs an alpha range in the space")
            if not plan.lstm:
                return None
            return train_intermediate(lf, hf, plan, point.alpha, seed=self.seed)
        lf_stage = self._lf_stage(lf, hf)
        if self.kind == "two-step":
            return train_two_step(lf, hf, self.lf_plan, plan, self.seed, lf_stage=lf_stage)
        return train_three_step(lf, hf, self.lf_plan, plan, seed=self.seed, lf_stage=lf_stage)

    def __call__(self, point):
        """Mean held-out MSE over folds; ``inf`` when any fold diverges or the
        point cannot build a network of this kind."""
        which = self._fold_fidelity()
        # held-out instances are scored on the output trained on their fidelity
        output = "final" if which == "hf" else ("tap" if self.kind == "intermediate" else "LF")
        scarce = getattr(self.data, which)
        scores = []
        for held in fold_indices(scarce.n_mu, self.folds):
            keep = np.setdiff1d(np.arange(scarce.n_mu), held)
            train_part, held_part = scarce.subset(keep), scarce.subset(held)
            lf, hf = self.data.lf, self.data.hf
            if which == "hf":
                hf = train_part
            else:
                lf = train_part
            try:
                model = self._fit(point, lf, hf)
                if model is None:
                    return math.inf
                pred = predict_dataset(model, held_part, output=output)
            except (TrainingDiverged, NumericError):
                return math.inf
            mse = test_mse(pred, held_part.y)
            if not np.isfinite(mse):
                return math.inf
            scores.append(mse)
        return float(np.mean(scores))


# -- searches --------------------------------------------------------------

def _evaluate(index, point, objective, seed, n_params):
    start = time.perf_counter()
    value = float(objective(point))
    status = "ok" if np.isfinite(value) else "failed"
    return TrialRecord(index, point, value if status == "ok" else math.inf, status, seed, n_params,
                       time.perf_counter() - start)


def _n_params(objective, point):
    fn = getattr(objective, "n_params", None)
    if fn is not None:
        return int(fn(point))
    return int(4 * point.lstm_depth * point.lstm_width ** 2 + point.dense_depth * point.dense_width ** 2)


def best_trial(log):
    """Smallest objective; ties go to the smaller network, then the earlier trial."""
    ok = [r for r in log if not r.failed]
    if not ok:
        raise SearchFailed("every trial failed", log)
    return min(ok, key=lambda r: (r.objective, r.n_params, r.index))


def _seed_of(objective):
    return int(getattr(objective, "seed", 0))


def _prior_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def random_search(space, budget, objective, seed=0):
    """``budget`` independent draws from the priors; returns ``(best, log)``."""
    if budget < 1:
        raise ConfigurationError("budget must be at least 1")
    rng = _prior_rng(seed)
    log = []
    for i in range(budget):
        p = space.sample(rng)
        log.append(_evaluate(i, p, objective, _seed_of(objective), _n_params(objective, p)))
    return best_trial(log), log


def adaptive_search(space, budget, objective, seed=0, explore=0.2, scale=0.15):
    """Random draws for the first half of the budget, then draws around a
    uniformly chosen member of the current top quartile, replaced by a prior
    draw with probability ``explore``.

    The first half reproduces :func:`random_search` with the same seed.
    """
    if budget < 10:
        raise ConfigurationError("adaptive search needs a budget of at least 10")
    rng = _prior_rng(seed)
    n_random = budget // 2
    log = []
    for i in range(n_random):
        p = space.sample(rng)
        log.append(_evaluate(i, p, objective, _seed_of(objective), _n_params(objective, p)))
    krng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(1,)))
    for i in range(n_random, budget):
        ok = sorted((r for r in log if not r.failed), key=lambda r: (r.objective, r.n_params, r.index))
        if not ok or krng.uniform() < explore:
            p = space.sample(krng)
        else:
            top = ok[:max(1, len(ok) // 4)]
            p = space.perturb(top[int(krng.integers(len(top)))].point, krng, scale)
        log.append(_evaluate(i, p, objective, _seed_of(objective), _n_params(objective, p)))
    return best_trial(log), log


# -- logs ------------------------------------------------------------------

TRIAL_COLUMNS = ["index"] + POINT_FIELDS + ["objective", "n_params", "seed", "status"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trial_log(log, path, timing_path=None):
    """Trial CSV in index order. Wall times go to ``timing_path`` (if given)
    so that the trial CSV itself is reproducible byte for byte."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in sorted(log, key=lambda r: r.index):
            d = r.point.to_dict()
            w.writerow([r.index] + [_fmt(d[k]) for k in POINT_FIELDS]
                       + [_fmt(float(r.objective)), r.n_params, r.seed, r.status])
    if timing_path is not None:
        with open(timing_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "wall_time"])
            for r in sorted(log, key=lambda r: r.index):
                w.writerow([r.index, repr(r.wall_time)])


def read_trial_log(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k in POINT_FIELDS:
                v = row[k]
                if k == "optimizer":
                    kw[k] = v
                elif k in ("lr", "alpha"):
                    kw[k] = float(v) if v != "" else None
                else:
                    kw[k] = int(v)
            out.append(TrialRecord(int(row["index"]), HyperPoint(**kw), float(row["objective"]),
                                   row["status"], int(row["seed"]), int(row["n_params"])))
    return out


def winner_summary(best, log, method):
    return {
        "method": method,
        "budget": len(log),
        "failed": sum(r.failed for r in log),
        "winner": {"index": best.index, "objective": best.objective, "n_params": best.n_params,
                   "seed": best.seed, "point": best.point.to_dict()},
    }


def write_winner(best, log, method, path):
    with open(path, "w") as fh:
        json.dump(winner_summary(best, log, method), fh, indent=1, sort_keys=True)
        fh.write("\n")


def cv_objective(point, data, kind="single", folds=4, **options):
    """Cross-validated objective of ``point``; see :class:`CvObjective`."""
    return CvObjective(data, kind, folds, **options)(point)
