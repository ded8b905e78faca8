"""Multi-fidelity surrogate models built from chained LSTM/dense networks.

Every model is a list of *stages*. A stage is one trained network whose input
at each time step is the normalized ``(t, mu)`` vector followed by the
normalized outputs of its upstream stages. Stages are trained one after the
other with the upstream ones frozen, so a model is fully described by its
stage list plus the shared input scaler.

Supported kinds:

``single``        one network on one fidelity
``two-step``      NN_LF -> NN_HF
``three-step``    NN_LF -> NN_Lin (identity activations) -> NN_HF
``intermediate``  one network with a linear LF read-out on a hidden LSTM layer
``multi-level``   M levels wired in ``series`` or ``parallel``
"""
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .datasets import (
    MinMaxScaler,
    fit_input_scaler,
    make_subsequences,
    test_mse,
    uniform_grid,
)
from .errors import (
    ConfigurationError,
    DomainError,
    NumericError,
    ParseError,
    PartialEnsembleError,
    TrainingDiverged,
)
from .nn import (
    DenseLayerParams,
    NetworkParams,
    NetworkSpec,
    OptimizerState,
    TrainConfig,
    backward,
    clip_by_global_norm,
    dense_backward,
    dense_forward,
    epoch_batches,
    glorot_uniform,
    init_params,
    mse_loss,
    mse_loss_grad,
    network_forward,
    optimizer_step,
    params_from_dict,
    params_to_dict,
    train,
)


MODEL_FORMAT = "mflstm.model/1"
KINDS = ("single", "two-step", "three-step", "intermediate", "multi-level")


def component_seed(seed, step, member=0):
    """Seed for one network of a pipeline, derived from the experiment seed.

    Only the step and ensemble-member indices enter, so pipelines with the
    same wiring (e.g. series with two levels and the two-step model) draw
    identical seeds.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(step), int(member)))
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class StagePlan:
    """Architecture and optimizer settings for one stage.

    Input and output widths are implied by the wiring. ``K`` is the training
    window length (``None`` = whole trajectory, clamped to the trajectory
    length) and ``stride`` the window stride (defaults to ``K``).
    """

    lstm: tuple = ()
    hidden: tuple = ()
    activation: str = "tanh"
    train: TrainConfig = field(default_factory=TrainConfig)
    K: int = None
    stride: int = None

    def spec(self, input_dim, output_dim):
        return NetworkSpec.build(input_dim, output_dim, lstm=tuple(self.lstm),
                                 hidden=tuple(self.hidden), activation=self.activation)

    def to_dict(self):
        d = asdict(self)
        d["lstm"], d["hidden"] = list(self.lstm), list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["train"] = TrainConfig(**d["train"])
        d["lstm"], d["hidden"] = tuple(d["lstm"]), tuple(d["hidden"])
        return cls(**d)


LINEAR_PLAN = StagePlan(activation="identity")


@dataclass
class Tap:
    """Linear LF read-out attached to the hidden sequence of an LSTM layer."""

    layer: int
    readout: DenseLayerParams
    output_scaler: MinMaxScaler


@dataclass
class Stage:
    role: str
    spec: NetworkSpec
    params: NetworkParams
    upstream: tuple
    output_scaler: MinMaxScaler
    K: int             # prediction window (None = whole trajectory)
    plan: StagePlan
    seed: int
    history: dict = field(default_factory=dict)
    tap: Tap = None

    @property
    def output_dim(self):
        return self.spec.output_dim


@dataclass
class MfModel:
    kind: str
    stages: list
    input_scaler: MinMaxScaler
    alpha: float = None
    mode: str = None
    level_weights: tuple = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha={self.alpha} outside [0, 1]")
        if self.level_weights is not None:
            w = np.asarray(self.level_weights, dtype=float)
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ConfigurationError("level weights must be positive and sum to 1")
        validate_wiring(self)

    @property
    def p_in(self):
        return self.input_scaler.lo.size

    @property
    def final(self):
        return self.stages[-1]

    def roles(self):
        return [s.role for s in self.stages]

    def stage(self, role):
        for s in self.stages:
            if s.role == role:
                return s
        raise KeyError(role)


def validate_wiring(model):
    """Each stage's input width = ``p_in`` + sum of its upstream output widths,
    and every upstream index refers to an earlier stage."""
    for i, st in enumerate(model.stages):
        if any(not 0 <= u < i for u in st.upstream):
            raise ConfigurationError(f"stage {st.role!r} has a cyclic or forward upstream link")
        expected = model.p_in + sum(model.stages[u].output_dim for u in st.upstream)
        if st.spec.input_dim != expected:
            raise ConfigurationError(
                f"stage {st.role!r} expects {st.spec.input_dim} inputs, wiring supplies {expected}")
        st.params.check(st.spec)


# -- windowed evaluation ---------------------------------------------------

def prediction_windows(n_t, K):
    """Non-overlapping windows at ``0, K, 2K, ...``; the last one is shifted
    back to end at ``n_t`` and contributes only the points not yet covered.
    ``K = None`` runs the whole trajectory as one window."""
    K = n_t if K is None else min(K, n_t)
    out = []
    for start in range(0, n_t, K):
        if start + K <= n_t:
            out.append((start, start, start + K))
        else:
            out.append((n_t - K, start, n_t))
    return K, out


def _window_forward(fn, inputs, K):
    """Apply ``fn`` (a batch -> batch function) window by window to full
    trajectories ``(N, N_t, p)`` and reassemble ``(N, N_t, q)``."""
    N, n_t, _ = inputs.shape
    K, wins = prediction_windows(n_t, K)
    blocks = np.concatenate([inputs[:, a:a + K] for a, _, _ in wins])
    out = fn(blocks)
    result = np.empty((N, n_t, out.shape[-1]))
    for w, (a, lo, hi) in enumerate(wins):
        result[:, lo:hi] = out[w * N:(w + 1) * N, lo - a:hi - a]
    return result


def _network_fn(stage):
    return lambda x: network_forward(stage.spec, stage.params, x)[0]


def _tap_fn(stage):
    def fn(x):
        _, cache = network_forward(stage.spec, stage.params, x)
        return dense_forward(cache.hidden[stage.tap.layer], stage.tap.readout)[0]
    return fn


def stage_outputs(model, x_norm, upto=None):
    """Normalized outputs of every stage on full trajectories ``x_norm``."""
    outs = []
    stages = model.stages if upto is None else model.stages[:upto]
    for st in stages:
        inp = np.concatenate([x_norm] + [outs[u] for u in st.upstream], axis=-1)
        outs.append(_window_forward(_network_fn(st), inp, st.K))
    return outs


def _trajectory_inputs(mu_values, times, p_mu):
    mu = np.asarray(mu_values, dtype=np.float64).reshape(-1, p_mu)
    times = np.asarray(times, dtype=np.float64)
    uniform_grid(times)
    if not np.all(np.isfinite(mu)):
        raise DomainError("non-finite parameter value")
    t = np.broadcast_to(times[None, :, None], (mu.shape[0], times.size, 1))
    m = np.broadcast_to(mu[:, None, :], (mu.shape[0], times.size, p_mu))
    return np.concatenate([t, m], axis=-1)


def predict_many(model, mu_values, times, output="final"):
    """Physical-unit predictions ``(N_mu, N_t, p_out)`` for several parameters.

    ``output`` selects ``"final"`` (default), a stage role, or ``"tap"`` for
    the LF read-out of an intermediate model.
    """
    x = model.input_scaler.apply(_trajectory_inputs(mu_values, times, model.p_in - 1))
    if output == "tap":
        st = model.final
        if st.tap is None:
            raise ConfigurationError("model has no LF read-out")
        return st.tap.output_scaler.invert(_window_forward(_tap_fn(st), x, st.K))
    idx = len(model.stages) - 1 if output == "final" else model.roles().index(output)
    outs = stage_outputs(model, x, upto=idx + 1)
    return model.stages[idx].output_scaler.invert(outs[idx])


def predict(model, mu, times, output="final"):
    """Physical-unit prediction ``(N_t, p_out)`` for one parameter value."""
    return predict_many(model, np.atleast_1d(np.asarray(mu, dtype=np.float64))[None, :], times,
                        output)[0]


def predict_dataset(model, dataset, output="final"):
    return predict_many(model, dataset.mu, dataset.times, output)


def evaluate_mse(model, dataset, output="final"):
    return test_mse(predict_dataset(model, dataset, output), dataset.y)


# -- stage training --------------------------------------------------------

def _windows(dataset, K, stride, inputs, outputs):
    K = min(K or dataset.n_t, dataset.n_t)
    stride = K if stride is None else stride
    return K, make_subsequences(dataset, K, stride, inputs=inputs, outputs=outputs)


def _fit_stage(role, plan, dataset, x_norm, upstream_feats, upstream, seed, output_scaler=None,
               params=None):
    scaler = output_scaler or MinMaxScaler.fit(dataset.y)
    inputs = np.concatenate([x_norm] + list(upstream_feats), axis=-1)
    _, batch = _windows(dataset, plan.K, plan.stride, inputs, scaler.apply(dataset.y))
    spec = plan.spec(inputs.shape[-1], dataset.p_out)
    cfg = replace(plan.train, seed=seed)
    trained, hist = train(spec, batch, cfg, params=params)
    # prediction uses the plan's window, not one clamped to the training length
    return Stage(role, spec, trained, tuple(upstream), scaler, plan.K, plan, seed, hist)


def _check_linear(plan):
    if plan.lstm or plan.activation != "identity":
        raise ConfigurationError("the linear-correction network must be dense with identity activations")


def _union_domain_flags(lower, upper):
    """Flag when a higher-fidelity grid leaves the lower-fidelity data range."""
    flags = []
    if upper.times[0] < lower.times[0] - 1e-12 or upper.times[-1] > lower.times[-1] + 1e-12:
        flags.append(f"{upper.fidelity} times extend beyond {lower.fidelity} data")
    if np.any(upper.mu.min(0) < lower.mu.min(0) - 1e-12) or np.any(upper.mu.max(0) > lower.mu.max(0) + 1e-12):
        flags.append(f"{upper.fidelity} parameters extend beyond {lower.fidelity} data")
    return flags


def _provenance(seed, datasets, extra=None):
    prov = {"seed": int(seed), "datasets": {d.fidelity: d.digest() for d in datasets}}
    if extra:
        prov.update(extra)
    return prov


def train_single(plan, dataset, seed=0, input_datasets=None, role="single"):
    """One network trained on one fidelity. Empty ``plan.lstm`` gives a feed-forward baseline."""
    scaler = fit_input_scaler(input_datasets or [dataset])
    x = scaler.apply(dataset.inputs())
    st = _fit_stage(role, plan, dataset, x, [], (), component_seed(seed, 0))
    return MfModel("single", [st], scaler, provenance=_provenance(seed, [dataset]))


def _chain(datasets, plans, wiring, roles, seed, scaler, frozen=None):
    """Train stages in order; ``wiring[i]`` lists upstream stage indices and
    ``datasets[i]`` the data stage ``i`` is fitted to. ``frozen`` maps a stage
    index to an already-trained stage that is reused unchanged."""
    frozen = frozen or {}
    stages = []
    for i, (ds, plan, ups, role) in enumerate(zip(datasets, plans, wiring, roles)):
        if i in frozen:
            stages.append(frozen[i])
            continue
        x = scaler.apply(ds.inputs())
        probe = MfModel("single", stages, scaler) if stages else None
        feats = stage_outputs(probe, x) if probe is not None else []
        stages.append(_fit_stage(role, plan, ds, x, [feats[u] for u in ups], ups,
                                 component_seed(seed, i)))
    return stages


def train_two_step(lf, hf, lf_plan, hf_plan, seed=0, lf_stage=None):
    """NN_LF on the LF data, then NN_HF on ``[x_HF, f_LF(x_HF)]``.

    ``lf_stage`` reuses an already trained LF stage (its input scaling must
    match the union of ``lf`` and ``hf``).
    """
    _check_outputs([lf, hf])
    scaler = fit_input_scaler([lf, hf])
    frozen = {0: lf_stage} if lf_stage is not None else None
    stages = _chain([lf, hf], [lf_plan, hf_plan], [(), (0,)], ["LF", "HF"], seed, scaler, frozen)
    prov = _provenance(seed, [lf, hf], {"flags": _union_domain_flags(lf, hf)})
    return MfModel("two-step", stages, scaler, provenance=prov)


def train_three_step(lf, hf, lf_plan, hf_plan, lin_plan=LINEAR_PLAN, seed=0, lf_stage=None):
    """NN_LF, then a linear NN_Lin on ``[x, f_LF]``, then NN_HF on ``[x, f_LF, f_Lin]``."""
    _check_outputs([lf, hf])
    _check_linear(lin_plan)
    scaler = fit_input_scaler([lf, hf])
    frozen = {0: lf_stage} if lf_stage is not None else None
    stages = _chain([lf, hf, hf], [lf_plan, lin_plan, hf_plan], [(), (0,), (0, 1)],
                    ["LF", "Lin", "HF"], seed, scaler, frozen)
    prov = _provenance(seed, [lf, hf], {"flags": _union_domain_flags(lf, hf)})
    return MfModel("three-step", stages, scaler, provenance=prov)


def _check_outputs(datasets):
    dims = {d.p_out for d in datasets}
    pmu = {d.p_mu for d in datasets}
    if len(dims) != 1 or len(pmu) != 1:
        raise ConfigurationError(f"fidelity levels disagree on output/parameter dims: {sorted(dims)}, {sorted(pmu)}")


def multilevel_wiring(M, mode):
    if mode == "series":
        return [tuple(range(m - 1, -1, -1)) for m in range(M)]
    if mode == "parallel":
        return [()] * (M - 1) + [tuple(range(M - 2, -1, -1))]
    raise ConfigurationError(f"unknown multi-level mode {mode!r}")


def train_multilevel(datasets, plans, mode="series", seed=0, level_weights=None, reuse=None,
                     retrain=()):
    """M-level model; ``datasets`` and ``plans`` are ordered from lowest to highest fidelity.

    In parallel mode, passing a previously trained model as ``reuse`` keeps
    every lower level bit-identical except those listed in ``retrain``; the
    final level is always retrained.
    """
    M = len(datasets)
    if M < 2 or len(plans) != M:
        raise ConfigurationError("need at least two levels and one plan per level")
    _check_outputs(datasets)
    wiring = multilevel_wiring(M, mode)
    scaler = fit_input_scaler(datasets)
    frozen = None
    if reuse is not None:
        if mode != "parallel" or reuse.mode != "parallel" or len(reuse.stages) != M:
            raise ConfigurationError("selective retraining requires a parallel model with the same levels")
        if not (np.array_equal(reuse.input_scaler.lo, scaler.lo) and np.array_equal(reuse.input_scaler.hi, scaler.hi)):
            raise ConfigurationError("new data changes the shared input scaling; retrain all levels")
        frozen = {i: reuse.stages[i] for i in range(M - 1) if i not in set(retrain)}
    roles = [f"level-{m + 1}" for m in range(M)]
    stages = _chain(datasets, plans, wiring, roles, seed, scaler, frozen)
    weights = tuple(level_weights) if level_weights is not None else tuple([1.0 / M] * M)
    flags = sum((_union_domain_flags(a, b) for a, b in zip(datasets, datasets[1:])), [])
    return MfModel("multi-level", stages, scaler, mode=mode, level_weights=weights,
                   provenance=_provenance(seed, datasets, {"flags": flags}))


# -- intermediate model ----------------------------------------------------

def interleaved_schedule(rng, n_lf, n_hf, batch_size):
    """One epoch of ``(lf_indices, hf_indices)`` pairs: both sets are shuffled
    into mini-batches and the shorter list is cycled."""
    lf_b = epoch_batches(rng, n_lf, batch_size)
    hf_b = epoch_batches(rng, n_hf, batch_size)
    return [(lf_b[i % len(lf_b)], hf_b[i % len(hf_b)]) for i in range(max(len(lf_b), len(hf_b)))]


def _joint(params, readout):
    return NetworkParams(list(params.lstm), list(params.dense) + [readout])


def _split(joint):
    return NetworkParams(list(joint.lstm), list(joint.dense[:-1])), joint.dense[-1]


def intermediate_gradients(spec, params, readout, tap_layer, lf_batch, hf_batch, alpha):
    """Gradient of ``alpha * L_HF + (1 - alpha) * L_LF``.

    ``lf_batch``/``hf_batch`` are ``(inputs, targets)`` pairs in normalized
    units. A term whose weight is zero is not evaluated, so its contribution
    is exactly zero. Returns ``(joint_grads, loss_hf, loss_lf)`` where the
    read-out gradient is the last dense entry of ``joint_grads``.
    """
    zero_main = params.with_arrays([np.zeros_like(a) for a in params.arrays()])
    g_main = [np.zeros_like(a) for a in params.arrays()]
    g_tap = DenseLayerParams(np.zeros_like(readout.W), np.zeros_like(readout.b), "identity")
    loss_hf = loss_lf = float("nan")
    if alpha > 0.0:
        x, y = hf_batch
        out, cache = network_forward(spec, params, x)
        loss_hf = mse_loss(out, y)
        g = backward(spec, params, cache, mse_loss_grad(out, y))
        g_main = [alpha * a for a in g.arrays()]
    if alpha < 1.0:
        x, y = lf_batch
        _, cache = network_forward(spec, params, x)
        tap_out, tap_cache = dense_forward(cache.hidden[tap_layer], readout)
        loss_lf = mse_loss(tap_out, y)
        dro, d_hidden = dense_backward(mse_loss_grad(tap_out, y), tap_cache, readout)
        g = backward(spec, params, cache, None, hidden_gradients={tap_layer: d_hidden})
        w = 1.0 - alpha
        g_main = [gm + w * a for gm, a in zip(g_main, g.arrays())]
        g_tap = DenseLayerParams(w * dro.W, w * dro.b, "identity")
    return _joint(zero_main.with_arrays(g_main), g_tap), loss_hf, loss_lf


def train_intermediate(lf, hf, plan, alpha, tap_layer=0, seed=0, stage_seed=None):
    """Single network; HF loss at the output, LF loss at a linear read-out of
    LSTM layer ``tap_layer``, weighted ``alpha`` and ``1 - alpha``.

    ``stage_seed`` bypasses the seed derivation (used for ensemble members).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha={alpha} outside [0, 1]")
    _check_outputs([lf, hf])
    if not plan.lstm or not 0 <= tap_layer < len(plan.lstm):
        raise ConfigurationError(f"tap layer {tap_layer} is not an LSTM layer of the plan")
    scaler = fit_input_scaler([lf, hf])
    lf_scaler, hf_scaler = MinMaxScaler.fit(lf.y), MinMaxScaler.fit(hf.y)
    _, lf_b = _windows(lf, plan.K, plan.stride, scaler.apply(lf.inputs()), lf_scaler.apply(lf.y))
    _, hf_b = _windows(hf, plan.K, plan.stride, scaler.apply(hf.inputs()), hf_scaler.apply(hf.y))
    spec = plan.spec(lf.p_in, hf.p_out)
    cfg = replace(plan.train, seed=component_seed(seed, 0) if stage_seed is None else int(stage_seed))

    rng = np.random.default_rng(cfg.seed)
    params = init_params(spec, rng)
    H = plan.lstm[tap_layer]
    readout = DenseLayerParams(glorot_uniform(rng, lf.p_out, H), np.zeros(lf.p_out), "identity")
    joint = _joint(params, readout)
    opt = OptimizerState(cfg.optimizer, cfg.lr)
    history = {"loss": [], "loss_hf": [], "loss_lf": []}
    for epoch in range(cfg.epochs):
        tot = tot_hf = tot_lf = 0.0
        sched = interleaved_schedule(rng, len(lf_b), len(hf_b), cfg.batch_size)
        for li, hi in sched:
            p, r = _split(joint)
            g, l_hf, l_lf = intermediate_gradients(
                spec, p, r, tap_layer, (lf_b.inputs[li], lf_b.outputs[li]),
                (hf_b.inputs[hi], hf_b.outputs[hi]), alpha)
            if cfg.clip_norm is not None:
                g = clip_by_global_norm(g, cfg.clip_norm)
            joint, opt = optimizer_step(joint, g, opt)
            loss = (alpha * l_hf if alpha > 0 else 0.0) + ((1 - alpha) * l_lf if alpha < 1 else 0.0)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            tot += loss
            tot_hf += l_hf if alpha > 0 else 0.0
            tot_lf += l_lf if alpha < 1 else 0.0
        history["loss"].append(tot / len(sched))
        history["loss_hf"].append(tot_hf / len(sched))
        history["loss_lf"].append(tot_lf / len(sched))
    params, readout = _split(joint)
    out, _ = network_forward(spec, params, hf_b.inputs)
    history["final_loss"] = mse_loss(out, hf_b.outputs)
    st = Stage("intermediate", spec, params, (), hf_scaler, plan.K, plan, cfg.seed, history,
               Tap(tap_layer, readout, lf_scaler))
    return MfModel("intermediate", [st], scaler, alpha=float(alpha),
                   provenance=_provenance(seed, [lf, hf], {"tap_layer": tap_layer}))


# -- ensembles -------------------------------------------------------------

@dataclass
class EnsembleResult:
    seeds: list
    predictions: np.ndarray   # n_members x N_mu x N_t x p_out
    mean: np.ndarray
    std: np.ndarray
    test_mse: np.ndarray      # per member (empty without a test set)
    mse_mean: float = None
    mse_std: float = None


def retrain_final(model, dataset, seed, lf_dataset=None):
    """Copy of ``model`` whose final network is retrained with ``seed``;
    upstream networks stay frozen."""
    st = model.final
    if model.kind == "intermediate":
        if lf_dataset is None:
            raise ConfigurationError("retraining an intermediate model needs the LF dataset")
        new = train_intermediate(lf_dataset, dataset, st.plan, model.alpha, st.tap.layer,
                                 stage_seed=seed)
        return replace(new, provenance=dict(model.provenance, final_seed=int(seed)))
    x = model.input_scaler.apply(dataset.inputs())
    feats = stage_outputs(model, x, upto=len(model.stages) - 1)
    new_st = _fit_stage(st.role, st.plan, dataset, x, [feats[u] for u in st.upstream], st.upstream,
                        seed, output_scaler=st.output_scaler)
    return replace(model, stages=list(model.stages[:-1]) + [new_st],
                   provenance=dict(model.provenance, final_seed=int(seed)))


def member_seeds(seed, n_members, step):
    return [component_seed(seed, step, m + 1) for m in range(n_members)]


def ensemble_uq(model, dataset, n_members, seed=0, test_dataset=None, seeds=None, lf_dataset=None):
    """Retrain the final network ``n_members`` times and summarize predictions.

    Predictions are made on ``test_dataset`` (or ``dataset``). The spread is
    the sample standard deviation (``ddof=1``) across members.
    """
    if n_members < 2:
        raise ConfigurationError("an ensemble needs at least two members")
    seeds = list(seeds) if seeds is not None else member_seeds(seed, n_members, len(model.stages) - 1)
    if len(seeds) != n_members:
        raise ConfigurationError("need one seed per member")
    if model.kind == "intermediate" and lf_dataset is None:
        raise ConfigurationError("retraining an intermediate model needs the LF dataset")
    target = test_dataset or dataset
    preds, mses, failed, done = [], [], [], []
    for s in seeds:
        try:
            m = retrain_final(model, dataset, s, lf_dataset)
        except (TrainingDiverged, NumericError):
            failed.append(s)
            continue
        p = predict_dataset(m, target)
        preds.append(p)
        done.append(s)
        if test_dataset is not None:
            mses.append(test_mse(p, test_dataset.y))
    if failed:
        raise PartialEnsembleError(failed, done)
    preds = np.stack(preds)
    mses = np.array(mses)
    # deviations about the first member keep identical members exactly spread-free
    shifted = preds - preds[0]
    mean = preds[0] + shifted.mean(axis=0)
    std = np.sqrt(np.sum((shifted - shifted.mean(axis=0)) ** 2, axis=0) / (n_members - 1))
    res = EnsembleResult(seeds, preds, mean, std, mses)
    if mses.size:
        res.mse_mean, res.mse_std = float(mses.mean()), float(mses.std(ddof=1))
    return res


# -- persistence -----------------------------------------------------------

def model_to_dict(model):
    stages = []
    for st in model.stages:
        entry = {
            "role": st.role,
            "network": params_to_dict(st.spec, st.params),
            "upstream": list(st.upstream),
            "output_scaler": st.output_scaler.to_dict(),
            "K": st.K,
            "plan": st.plan.to_dict(),
            "seed": st.seed,
            "history": st.history,
        }
        if st.tap is not None:
            r = st.tap.readout
            entry["tap"] = {"layer": st.tap.layer, "shape": list(r.W.shape), "W": r.W.ravel().tolist(),
                            "b": r.b.tolist(), "output_scaler": st.tap.output_scaler.to_dict()}
        stages.append(entry)
    return {
        "format": MODEL_FORMAT,
        "kind": model.kind,
        "alpha": model.alpha,
        "mode": model.mode,
        "level_weights": list(model.level_weights) if model.level_weights is not None else None,
        "input_scaler": model.input_scaler.to_dict(),
        "stages": stages,
        "provenance": model.provenance,
    }


def model_from_dict(doc):
    if doc.get("format") != MODEL_FORMAT:
        raise ParseError(f"unsupported model format {doc.get('format')!r}, expected {MODEL_FORMAT}")
    stages = []
    for e in doc["stages"]:
        spec, params = params_from_dict(e["network"])
        tap = None
        if "tap" in e:
            t = e["tap"]
            readout = DenseLayerParams(np.array(t["W"], dtype=np.float64).reshape(t["shape"]),
                                       np.array(t["b"], dtype=np.float64), "identity")
            tap = Tap(t["layer"], readout, MinMaxScaler.from_dict(t["output_scaler"]))
        stages.append(Stage(e["role"], spec, params, tuple(e["upstream"]),
                            MinMaxScaler.from_dict(e["output_scaler"]), e["K"],
                            StagePlan.from_dict(e["plan"]), e["seed"], e["history"], tap))
    lw = doc.get("level_weights")
    return MfModel(doc["kind"], stages, MinMaxScaler.from_dict(doc["input_scaler"]), doc.get("alpha"),
                   doc.get("mode"), tuple(lw) if lw is not None else None, doc.get("provenance", {}))


def save_model(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid model file: {exc.msg}", line=exc.lineno) from None
    return model_from_dict(doc)
