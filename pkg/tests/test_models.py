from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mflstm.datasets import MinMaxScaler, TimeParamDataset, build_grid_dataset, make_subsequences
from mflstm.errors import ConfigurationError, DomainError, PartialEnsembleError
from mflstm.generators import oscillator_evaluator, window_times
from mflstm.models import (
    LINEAR_PLAN,
    MfModel,
    Stage,
    StagePlan,
    component_seed,
    ensemble_uq,
    evaluate_mse,
    interleaved_schedule,
    intermediate_gradients,
    load_model,
    predict,
    predict_dataset,
    predict_many,
    save_model,
    stage_outputs,
    train_intermediate,
    train_multilevel,
    train_single,
    train_three_step,
    train_two_step,
    validate_wiring,
)
from mflstm.nn import (
    DenseLayerParams,
    NetworkSpec,
    OptimizerState,
    TrainConfig,
    backward,
    glorot_uniform,
    init_params,
    mse_loss_grad,
    network_forward,
    optimizer_step,
    train,
)

TIMES = window_times(13)
DOMAIN = [[70.0, 160.0]]


def osc(fidelity, mus):
    return build_grid_dataset(mus, TIMES, oscillator_evaluator(fidelity), fidelity, DOMAIN,
                              vectorized=True)


@pytest.fixture(scope="module")
def lf():
    return osc("LF", np.linspace(70, 160, 7))


@pytest.fixture(scope="module")
def hf():
    return osc("HF", np.linspace(70, 160, 4))


def small_plan(epochs=20, **kw):
    return StagePlan(lstm=(6,), hidden=(5,), train=TrainConfig(epochs=epochs, batch_size=4, lr=5e-3, **kw))


# -- single-fidelity -------------------------------------------------------

def test_feed_forward_baseline_has_no_lstm(hf):
    m = train_single(StagePlan(hidden=(4,), train=TrainConfig(epochs=2)), hf)
    assert m.final.spec.lstm_layers == () and m.kind == "single"
    assert predict(m, 100.0, TIMES).shape == (13, 2)


def test_constant_dataset_is_fitted_exactly():
    ds = TimeParamDataset("HF", [[1.0], [2.0], [3.0]], 0.0, 0.5, np.full((3, 6, 1), 2.5))
    m = train_single(small_plan(epochs=5), ds)
    assert evaluate_mse(m, ds) < 1e-6


def test_training_grid_prediction_reproduces_final_loss(hf):
    m = train_single(small_plan(epochs=30), hf)
    x = m.input_scaler.apply(hf.inputs())
    pred_norm = stage_outputs(m, x)[0]
    loss = np.mean((pred_norm - m.final.output_scaler.apply(hf.y)) ** 2)
    assert abs(loss - m.final.history["final_loss"]) < 1e-8


def test_prediction_is_deterministic_and_validates_grid(hf):
    m = train_single(small_plan(epochs=3), hf)
    np.testing.assert_array_equal(predict(m, 101.0, TIMES), predict(m, 101.0, TIMES))
    with pytest.raises(DomainError):
        predict(m, 101.0, np.array([14.5, 14.6, 14.8]))


def test_windowed_prediction_matches_manual_windows():
    ds = osc("HF", [80.0, 120.0])
    plan = StagePlan(lstm=(4,), train=TrainConfig(epochs=1), K=5)
    m = train_single(plan, ds)
    x = m.input_scaler.apply(ds.inputs())
    st = m.final
    expected = np.empty((2, 13, 2))
    for a, lo, hi in [(0, 0, 5), (5, 5, 10), (8, 10, 13)]:
        out = network_forward(st.spec, st.params, x[:, a:a + 5])[0]
        expected[:, lo:hi] = out[:, lo - a:hi - a]
    np.testing.assert_array_equal(stage_outputs(m, x)[0], expected)


# -- two-step --------------------------------------------------------------

def test_two_step_matches_manual_pipeline(lf, hf):
    m = train_two_step(lf, hf, small_plan(), small_plan(), seed=3)
    mus = np.array([[95.0], [133.0]])
    x = m.input_scaler.apply(np.concatenate(
        [np.broadcast_to(TIMES[None, :, None], (2, 13, 1)), np.broadcast_to(mus[:, None], (2, 13, 1))], -1))
    s_lf, s_hf = m.stages
    f_lf = network_forward(s_lf.spec, s_lf.params, x)[0]
    out = network_forward(s_hf.spec, s_hf.params, np.concatenate([x, f_lf], -1))[0]
    np.testing.assert_allclose(predict_many(m, mus, TIMES), s_hf.output_scaler.invert(out),
                               rtol=0, atol=1e-12)


def test_identical_fidelities_allow_identity_solution():
    # affine data so that NN_LF can converge exactly and the identity path exists
    def affine(mu, times):
        return np.stack([0.3 * times - 0.02 * mu + 1.0, -0.5 * times + 0.01 * mu], axis=-1)
    hf_ds = build_grid_dataset(np.linspace(70, 160, 5), TIMES, affine, "HF", DOMAIN, vectorized=True)
    lf_ds = TimeParamDataset("LF", hf_ds.mu, hf_ds.t0, hf_ds.dt, hf_ds.y, hf_ds.domain)
    lin = StagePlan(activation="identity", train=TrainConfig(epochs=3000, batch_size=5, lr=1e-2))
    m = train_two_step(lf_ds, hf_ds, lin, lin)
    assert m.stages[0].history["final_loss"] < 1e-6
    assert m.final.history["final_loss"] < 1e-6


def zero_lf_stage(lf, hf):
    probe = train_two_step(lf, hf, small_plan(epochs=0), small_plan(epochs=0))
    st = probe.stages[0]
    zero = st.params.with_arrays([np.zeros_like(a) for a in st.params.arrays()])
    return replace(st, params=zero)


def test_frozen_zero_lf_equals_constant_feature_training(lf, hf):
    lf_stage = zero_lf_stage(lf, hf)
    plan = small_plan(epochs=15)
    m = train_two_step(lf, hf, plan, plan, seed=4, lf_stage=lf_stage)
    assert m.stages[0] is lf_stage

    x = m.input_scaler.apply(hf.inputs())
    feats = np.concatenate([x, np.zeros(hf.y.shape)], axis=-1)
    batch = make_subsequences(hf, hf.n_t, hf.n_t, inputs=feats, outputs=m.final.output_scaler.apply(hf.y))
    spec = NetworkSpec.build(feats.shape[-1], 2, lstm=(6,), hidden=(5,))
    params, hist = train(spec, batch, replace(plan.train, seed=component_seed(4, 1)))
    assert hist["final_loss"] == m.final.history["final_loss"]
    for a, b in zip(params.arrays(), m.final.params.arrays()):
        np.testing.assert_array_equal(a, b)


def test_wiring_mismatch_rejected(lf, hf):
    m = train_two_step(lf, hf, small_plan(epochs=0), small_plan(epochs=0))
    bad = MfModel.__new__(MfModel)
    bad.__dict__.update(m.__dict__)
    bad.stages = [m.stages[0], replace(m.stages[1], upstream=())]
    with pytest.raises(ConfigurationError):
        validate_wiring(bad)
    one_output = TimeParamDataset("HF", [[90.0]], TIMES[0], TIMES[1] - TIMES[0], np.zeros((1, 13, 1)), DOMAIN)
    with pytest.raises(ConfigurationError):
        train_two_step(lf, one_output, small_plan(epochs=0), small_plan(epochs=0))


# -- three-step ------------------------------------------------------------

def test_linear_stage_structure(lf, hf):
    m = train_three_step(lf, hf, small_plan(epochs=2), small_plan(epochs=2))
    lin = m.stage("Lin")
    assert lin.spec.lstm_layers == () and lin.spec.output_dim == 2
    assert all(d.activation == "identity" for d in lin.params.dense)
    assert m.final.spec.input_dim == 2 + 2 + 2
    with pytest.raises(ConfigurationError):
        train_three_step(lf, hf, small_plan(), small_plan(), lin_plan=StagePlan(lstm=(2,)))


def test_affine_correlation_is_captured_by_linear_stage(lf, hf):
    lf_model = train_single(small_plan(epochs=10), lf, input_datasets=[lf, hf])
    f_lf = predict_dataset(lf_model, hf)
    affine = TimeParamDataset("HF", hf.mu, hf.t0, hf.dt, 2.0 * f_lf + 1.0, hf.domain)
    lf_stage = replace(lf_model.final, role="LF")
    lin = StagePlan(activation="identity",
                    train=TrainConfig(epochs=4000, batch_size=4, lr=1e-2, optimizer="adamax"))
    m = train_three_step(lf, affine, small_plan(), small_plan(epochs=5), lin_plan=lin, lf_stage=lf_stage)
    assert m.stage("Lin").history["final_loss"] < 1e-10


# -- intermediate ----------------------------------------------------------

def windows(ds, scaler_in, scaler_out):
    return make_subsequences(ds, ds.n_t, ds.n_t, inputs=scaler_in.apply(ds.inputs()),
                             outputs=scaler_out.apply(ds.y))


def test_alpha_one_equals_hf_only_reference(lf, hf):
    plan = small_plan(epochs=8)
    m = train_intermediate(lf, hf, plan, 1.0, tap_layer=0, seed=2)
    st = m.final
    hf_b = windows(hf, m.input_scaler, st.output_scaler)
    rng = np.random.default_rng(st.seed)
    spec = st.spec
    params = init_params(spec, rng)
    glorot_uniform(rng, 2, 6)  # read-out init consumes the same draws
    opt = OptimizerState(plan.train.optimizer, plan.train.lr)
    for _ in range(plan.train.epochs):
        for _, hi in interleaved_schedule(rng, lf.n_mu, hf.n_mu, plan.train.batch_size):
            out, cache = network_forward(spec, params, hf_b.inputs[hi])
            g = backward(spec, params, cache, mse_loss_grad(out, hf_b.outputs[hi]))
            params, opt = optimizer_step(params, g, opt)
    for a, b in zip(params.arrays(), st.params.arrays()):
        np.testing.assert_array_equal(a, b)


def garbage(ds, seed):
    return TimeParamDataset(ds.fidelity, ds.mu, ds.t0, ds.dt,
                            np.random.default_rng(seed).normal(size=ds.y.shape) * 50, ds.domain)


def test_alpha_endpoints_ignore_the_other_fidelity(lf, hf):
    plan = small_plan(epochs=4)
    a = train_intermediate(lf, hf, plan, 1.0, seed=1)
    b = train_intermediate(garbage(lf, 0), hf, plan, 1.0, seed=1)
    for x, y in zip(a.final.params.arrays(), b.final.params.arrays()):
        np.testing.assert_array_equal(x, y)
    c = train_intermediate(lf, hf, plan, 0.0, seed=1)
    d = train_intermediate(lf, garbage(hf, 1), plan, 0.0, seed=1)
    np.testing.assert_array_equal(c.final.params.lstm[0].W_f, d.final.params.lstm[0].W_f)
    np.testing.assert_array_equal(c.final.tap.readout.W, d.final.tap.readout.W)


def test_alpha_endpoint_gradients(lf, hf):
    rng = np.random.default_rng(0)
    spec = NetworkSpec.build(2, 2, lstm=(5, 4), hidden=(3,))
    params = init_params(spec, rng)
    readout = DenseLayerParams(rng.normal(size=(2, 5)), rng.normal(size=2), "identity")
    lf_b = (rng.normal(size=(3, 6, 2)), rng.normal(size=(3, 6, 2)))
    hf_b = (rng.normal(size=(2, 6, 2)), rng.normal(size=(2, 6, 2)))
    g0, _, _ = intermediate_gradients(spec, params, readout, 0, lf_b, hf_b, 0.0)
    # layers above the tap see no data gradient when only the LF term is active
    for layer in [g0.lstm[1]] + g0.dense[:-1]:
        for arr in layer.arrays().values():
            np.testing.assert_array_equal(arr, 0.0)
    assert np.any(g0.lstm[0].W_f != 0) and np.any(g0.dense[-1].W != 0)
    g1, _, _ = intermediate_gradients(spec, params, readout, 0, lf_b, hf_b, 1.0)
    np.testing.assert_array_equal(g1.dense[-1].W, 0.0)
    out, cache = network_forward(spec, params, hf_b[0])
    ref = backward(spec, params, cache, mse_loss_grad(out, hf_b[1]))
    for a, b in zip(ref.arrays(), g1.arrays()):
        np.testing.assert_array_equal(a, b)
    gm, _, _ = intermediate_gradients(spec, params, readout, 0, lf_b, hf_b, 0.3)
    for a, b, c in zip(gm.arrays(), g1.arrays(), g0.arrays()):
        np.testing.assert_allclose(a, 0.3 * b + 0.7 * c, rtol=1e-12, atol=1e-15)


def test_intermediate_validation(lf, hf):
    with pytest.raises(ConfigurationError):
        train_intermediate(lf, hf, small_plan(), 1.5)
    with pytest.raises(ConfigurationError):
        train_intermediate(lf, hf, small_plan(), 0.5, tap_layer=1)
    with pytest.raises(ConfigurationError):
        train_intermediate(lf, hf, StagePlan(hidden=(3,)), 0.5)


def test_intermediate_exposes_lf_readout(lf, hf):
    m = train_intermediate(lf, hf, small_plan(epochs=3), 0.5, seed=0)
    assert predict_many(m, lf.mu, lf.times, output="tap").shape == lf.y.shape
    assert len(m.final.history["loss"]) == 3


# -- multi-level -----------------------------------------------------------

def test_series_two_levels_equals_two_step(lf, hf):
    plan = small_plan(epochs=10)
    two = train_two_step(lf, hf, plan, plan, seed=7)
    ser = train_multilevel([lf, hf], [plan, plan], "series", seed=7)
    np.testing.assert_allclose(predict_dataset(ser, hf), predict_dataset(two, hf), rtol=0, atol=1e-10)


def test_parallel_retraining_keeps_other_levels(lf, hf):
    mid = osc("LF", np.linspace(70, 160, 5))
    mid = TimeParamDataset("MF", mid.mu, mid.t0, mid.dt, 0.5 * (mid.y + osc("HF", mid.mu).y), mid.domain)
    plans = [small_plan(epochs=3)] * 3
    m = train_multilevel([lf, mid, hf], plans, "parallel", seed=1)
    assert [s.upstream for s in m.stages] == [(), (), (1, 0)]
    m2 = train_multilevel([lf, mid, hf], plans, "parallel", seed=2, reuse=m, retrain={1})
    for a, b in zip(m.stages[0].params.arrays(), m2.stages[0].params.arrays()):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(m.stages[1].params.flat(), m2.stages[1].params.flat())
    with pytest.raises(ConfigurationError):
        train_multilevel([lf, hf], plans[:2], "series", reuse=m)


def test_multilevel_validation(lf, hf):
    with pytest.raises(ConfigurationError):
        train_multilevel([hf], [small_plan()])
    with pytest.raises(ConfigurationError):
        train_multilevel([lf, hf], [small_plan()] * 2, "diagonal")
    with pytest.raises(ConfigurationError):
        train_multilevel([lf, hf], [small_plan(epochs=0)] * 2, level_weights=(0.7, 0.7))


def nested_family(bias):
    def evaluate(mu, times):
        base = np.sin(3.0 * times + 0.02 * mu)
        return (base + bias * (1 + 0.01 * mu) * np.cos(5.0 * times))[:, None]
    return evaluate


def test_series_three_levels_beat_single_levels():
    times = np.linspace(0.0, 2.0, 15)
    dom = [[0.0, 100.0]]
    levels = [build_grid_dataset(np.linspace(0, 100, n), times, nested_family(b), f"level-{i + 1}", dom,
                                 vectorized=True)
              for i, (n, b) in enumerate([(15, 0.4), (7, 0.15), (3, 0.0)])]
    truth = build_grid_dataset(np.linspace(3, 97, 12), times, nested_family(0.0), "HF", dom, vectorized=True)
    plan = StagePlan(lstm=(8,), hidden=(8,), train=TrainConfig(epochs=150, batch_size=8, lr=1e-2))
    finals, bests = [], []
    for seed in range(3):
        m = train_multilevel(levels, [plan] * 3, "series", seed=seed)
        finals.append(evaluate_mse(m, truth))
        bests.append(min(evaluate_mse(train_single(plan, d, seed), truth) for d in levels))
    assert np.median(finals) <= np.median(bests)


# -- ensembles -------------------------------------------------------------

def test_ensemble_identical_seeds_has_zero_spread(lf, hf):
    m = train_two_step(lf, hf, small_plan(epochs=3), small_plan(epochs=3))
    res = ensemble_uq(m, hf, 3, seeds=[5, 5, 5])
    np.testing.assert_array_equal(res.std, 0.0)


def test_two_member_spread_formula(lf, hf):
    m = train_two_step(lf, hf, small_plan(epochs=3), small_plan(epochs=3))
    res = ensemble_uq(m, hf, 2, seed=9, test_dataset=hf)
    p1, p2 = res.predictions
    np.testing.assert_allclose(res.std, np.abs(p1 - p2) / np.sqrt(2), rtol=1e-12, atol=1e-15)
    assert res.test_mse.shape == (2,) and res.mse_std >= 0
    # the upstream network is shared by every member
    assert len(set(res.seeds)) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failed_members_are_reported(lf, hf):
    m = train_two_step(lf, hf, small_plan(epochs=1), small_plan(epochs=1))
    bad = replace(m.final, plan=replace(m.final.plan, train=TrainConfig(epochs=3, lr=1e300)))
    broken = replace(m, stages=[m.stages[0], bad])
    with pytest.raises(PartialEnsembleError) as err:
        ensemble_uq(broken, hf, 2, seeds=[1, 2])
    assert err.value.failed_seeds == [1, 2]
    with pytest.raises(ConfigurationError):
        ensemble_uq(m, hf, 1)


def test_intermediate_ensemble_needs_lf_data(lf, hf):
    m = train_intermediate(lf, hf, small_plan(epochs=2), 0.5)
    with pytest.raises(ConfigurationError):
        ensemble_uq(m, hf, 2)
    res = ensemble_uq(m, hf, 2, seeds=[3, 3], lf_dataset=lf)
    np.testing.assert_array_equal(res.std, 0.0)


# -- persistence -----------------------------------------------------------

@pytest.mark.parametrize("kind", ["single", "two-step", "three-step", "intermediate", "series", "parallel"])
def test_model_round_trip_is_bit_exact(kind, lf, hf, tmp_path):
    p = small_plan(epochs=2)
    build = {
        "single": lambda: train_single(p, hf),
        "two-step": lambda: train_two_step(lf, hf, p, p),
        "three-step": lambda: train_three_step(lf, hf, p, p),
        "intermediate": lambda: train_intermediate(lf, hf, p, 0.4),
        "series": lambda: train_multilevel([lf, hf], [p, p], "series"),
        "parallel": lambda: train_multilevel([lf, lf, hf], [p, p, p], "parallel"),
    }
    m = build[kind]()
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.kind == m.kind and back.roles() == m.roles()
    for s1, s2 in zip(m.stages, back.stages):
        for a, b in zip(s1.params.arrays(), s2.params.arrays()):
            np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(predict_dataset(back, hf), predict_dataset(m, hf))
    if kind == "intermediate":
        np.testing.assert_array_equal(predict_dataset(back, lf, "tap"), predict_dataset(m, lf, "tap"))


# -- structural property ---------------------------------------------------

@settings(max_examples=40, deadline=None, derandomize=True)
@given(seed=st.integers(0, 2**31), n_stages=st.integers(1, 4), p_mu=st.integers(1, 3),
       data=st.data())
def test_random_wirings_are_dimension_consistent(seed, n_stages, p_mu, data):
    rng = np.random.default_rng(seed)
    p_in = p_mu + 1
    stages = []
    for i in range(n_stages):
        ups = tuple(u for u in range(i) if data.draw(st.booleans()))
        p_out = int(rng.integers(1, 4))
        n_in = p_in + sum(stages[u].output_dim for u in ups)
        plan = StagePlan(lstm=tuple(int(w) for w in rng.integers(1, 5, size=rng.integers(0, 3))),
                         hidden=tuple(int(w) for w in rng.integers(1, 5, size=rng.integers(0, 2))))
        spec = plan.spec(n_in, p_out)
        stages.append(Stage(f"s{i}", spec, init_params(spec, rng), ups,
                            MinMaxScaler(np.zeros(p_out), np.ones(p_out)), 3, plan, 0))
    scaler = MinMaxScaler(np.zeros(p_in), np.ones(p_in))
    m = MfModel("multi-level" if n_stages > 1 else "single", stages, scaler)
    outs = stage_outputs(m, rng.normal(size=(2, 7, p_in)))
    assert [o.shape[-1] for o in outs] == [s.output_dim for s in stages]
    if n_stages > 1 and stages[-1].upstream:
        broken = list(stages)
        broken[-1] = replace(stages[-1], upstream=stages[-1].upstream[:-1])
        with pytest.raises(ConfigurationError):
            MfModel("multi-level", broken, scaler)
