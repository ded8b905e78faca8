import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from mflstm.datasets import load_csv, test_mse
from mflstm.errors import DomainError, ParseError
from mflstm.harness.config import ConfigError, ExperimentConfig, format_config, parse_config, parse_pairs
from mflstm.harness.experiment import (
    build_data,
    error_grid,
    extrapolation_sweep,
    parameter_grid,
    rerun,
    run_comparison,
    run_uq,
    time_grid,
    train_named,
    truncate_training,
)
from mflstm.harness.presets import model_settings
from mflstm.harness.report import read_error_grid, write_report
from mflstm.models import load_model, predict_dataset

# small oscillator setup shared by the tests below
FAST = """
benchmark = oscillator
n_mu_lf = 7
n_mu_hf = 4
n_mu_test = 5
sample_dt = 0.05
epoch_scale = 0.1
lf-lstm.LF.lstm = 8
lf-lstm.LF.hidden = 8
lf-lstm.LF.batch_size = 4
two-step.LF.lstm = 8
two-step.LF.hidden = 8
two-step.LF.batch_size = 4
two-step.HF.lstm = 8
two-step.HF.hidden = 8
three-step.LF.lstm = 8
three-step.LF.hidden = 8
three-step.LF.batch_size = 4
three-step.HF.lstm = 8
hf-lstm.HF.lstm = 8
intermediate.net.lstm = 8,8
intermediate.net.epochs = 20
"""


def fast(**kw):
    cfg = parse_config(FAST)
    return parse_pairs([(k, str(v)) for k, v in kw.items()], cfg)


@pytest.fixture(scope="module")
def data():
    return build_data(fast())


# -- configuration ---------------------------------------------------------

def test_config_parsing_types_and_comments():
    cfg = parse_config("benchmark = fhn  # trailing\n# comment\nmodels = hf-lstm,two-step\nseed=7\n"
                       "tstar = 0.5, 1.0\ntwo-step.HF.lr = 1e-3\n")
    assert cfg.benchmark == "fhn" and cfg.models == ("hf-lstm", "two-step") and cfg.seed == 7
    assert cfg.tstar == (0.5, 1.0)
    assert cfg.overrides == (("two-step", "HF", "lr", "1e-3"),)
    assert parse_config(format_config(cfg)) == cfg


@pytest.mark.parametrize("text, path", [
    ("benchmark = navier-stokes", "benchmark"),
    ("T = 10\nT_LF = 8\nT_HF = 9", "T_HF"),
    ("T = 10\nT_LF = 12", "T_LF"),
    ("seed = seven", "seed"),
    ("colour = red", "colour"),
    ("models = hf-lstm,gp", "models"),
    ("two-step.HF.lr = fast", "two-step.HF.lr"),
    ("two-step.HF.momentum = 0.9", "two-step.HF.momentum"),
])
def test_config_errors_name_the_field(text, path):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.path == path and str(err.value).startswith(path)


def test_config_line_errors():
    with pytest.raises(ParseError) as err:
        parse_config("seed = 1\nseed = 2\n")
    assert "line 2" in str(err.value)
    with pytest.raises(ParseError):
        parse_config("just words\n")


def test_settings_apply_overrides_and_scaling():
    cfg = parse_config("benchmark = lotka-volterra\nepoch_scale = 0.5\ntwo-step.HF.lstm = 8,8\n"
                       "intermediate.alpha = 0.25")
    stages, _ = model_settings(cfg, "two-step")
    assert stages["HF"].lstm == (8, 8) and stages["LF"].lstm == (64, 64, 64)
    assert stages["HF"].train.epochs == 1500 and stages["HF"].K == 25
    _, extra = model_settings(cfg, "intermediate")
    assert extra["alpha"] == 0.25
    with pytest.raises(ConfigError) as err:
        model_settings(parse_config("intermediate.tap = 9"), "intermediate")
    assert err.value.path == "intermediate.tap"
    with pytest.raises(ConfigError) as err:
        model_settings(parse_config("three-step.Lin.lstm = 4"), "three-step")
    assert err.value.path == "three-step.Lin"


# -- data ------------------------------------------------------------------

def test_grids():
    np.testing.assert_allclose(parameter_grid(0.0, 1.0, 4, offset=True), [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_allclose(parameter_grid(1.0, 3.0, 3), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(time_grid(0.0, 1.0, 0.25), [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ConfigError):
        time_grid(0.0, 1.0, 0.3)


def test_lotka_volterra_setup_matches_the_reference_configuration():
    d = build_data(parse_config("benchmark = lotka-volterra"))
    assert (d.lf.n_mu, d.lf.n_t) == (20, 61) and (d.hf.n_mu, d.hf.n_t) == (10, 41)
    assert (d.test.n_mu, d.test.n_t) == (30, 61) and d.test.p_out == 3
    assert d.hf.times[-1] == 10.0 and d.test.times[-1] == 15.0
    assert d.test.fidelity == "test"
    # test parameters sit between the HF training values
    assert not np.any(np.isclose(d.test.mu[:, None, 0], d.hf.mu[None, :, 0]))


def test_test_data_never_trains(data):
    with pytest.raises(ConfigError):
        train_named(fast(), "hf-lstm", data.lf, data.test, 0)


def test_truncation_modes(data):
    lf, hf = truncate_training(data, 14.75, "both")
    assert lf.times[-1] <= 14.75 and hf.times[-1] <= 14.75
    lf, hf = truncate_training(data, 14.75, "hf-only")
    assert lf is data.lf and hf.times[-1] <= 14.75
    with pytest.raises(DomainError):
        truncate_training(data, 14.52, "both")


# -- comparison and error grids ----------------------------------------------

def test_single_model_gives_one_row(data):
    report = run_comparison(fast(models="hf-lstm"), data)
    assert len(report.mse_table()) == 1 and not report.partial


def test_error_grid_of_a_perfect_model_is_zero(data):
    model = train_named(fast(), "hf-lstm", data.lf, data.hf, 0)
    perfect = replace(data.test, y=predict_dataset(model, data.test))
    grid = error_grid(model, perfect)
    assert grid.shape == (perfect.n_mu, perfect.n_t)
    np.testing.assert_array_equal(grid, 0.0)


@pytest.fixture(scope="module")
def full_report(data, tmp_path_factory):
    cfg = fast(models="lf-lstm,hf-lstm,hf-ff,two-step,three-step,three-step-ff,intermediate")
    report = run_comparison(cfg, data)
    out = tmp_path_factory.mktemp("bundle")
    write_report(report, out)
    return report, out


def test_grid_squares_average_to_test_mse_for_every_kind(full_report):
    report, _ = full_report
    assert not report.partial
    for name, res in report.results.items():
        assert res.grid.shape == (report.data.test.n_mu, report.data.test.n_t)
        np.testing.assert_allclose(np.mean(res.grid ** 2), res.mse, rtol=1e-12, err_msg=name)


def test_report_mse_recomputed_from_saved_artifacts(full_report):
    report, out = full_report
    test = load_csv(out / "test.csv")
    with open(out / "mse_table.csv") as fh:
        table = {r["model"]: float(r["test_mse"]) for r in csv.DictReader(fh)}
    for name in report.results:
        model = load_model(out / f"model_{name}.json")
        np.testing.assert_allclose(test_mse(predict_dataset(model, test), test.y), table[name], rtol=1e-12)
        mu, times, grid = read_error_grid(out / f"error_grid_{name}.csv")
        np.testing.assert_array_equal(grid, report.results[name].grid)
        np.testing.assert_array_equal(times, report.data.test.times)


def test_bundle_layout_and_provenance(full_report):
    report, out = full_report
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["datasets"] == report.data.digests()
    assert ExperimentConfig.from_dict(prov["config"]) == report.config
    doc = json.loads((out / "report.json").read_text())
    assert set(doc["models"]) == set(report.results)


def test_rerun_from_provenance_reproduces_numbers(data):
    report = run_comparison(fast(models="hf-lstm,two-step"), data)
    again = rerun(report.provenance())
    for name in report.results:
        assert again.results[name].mse == report.results[name].mse


def test_failed_model_marks_report_partial(data):
    cfg = parse_pairs([("hf-lstm.HF.lr", "1e200")], fast(models="hf-lstm,lf-lstm"))
    with np.errstate(all="ignore"):
        report = run_comparison(cfg, data)
    assert report.partial
    bad = report.results["hf-lstm"]
    assert bad.status == "failed" and bad.stage == "train" and "TrainingDiverged" in bad.cause
    assert report.results["lf-lstm"].status == "ok"


# -- sweep and ensembles -----------------------------------------------------

def test_sweep_at_final_time_reproduces_comparison(data):
    cfg = fast(models="hf-lstm,two-step")
    comp = run_comparison(cfg, data)
    sweep = extrapolation_sweep(cfg, (14.75, 15.0), data)
    for name in cfg.models:
        assert [p.tstar for p in sweep.sweep[name]] == [14.75, 15.0]
        assert sweep.sweep[name][-1].mse == comp.results[name].mse


def test_sweep_reports_every_point_even_when_training_fails(data):
    cfg = parse_pairs([("hf-lstm.HF.lr", "1e200")], fast(models="hf-lstm,lf-lstm"))
    with np.errstate(all="ignore"):
        sweep = extrapolation_sweep(cfg, (14.8, 15.0), data)
    assert [p.status for p in sweep.sweep["hf-lstm"]] == ["failed", "failed"]
    assert all(p.mse is not None for p in sweep.sweep["lf-lstm"])


def test_sweep_rejects_bad_tstar(data):
    with pytest.raises(DomainError):
        extrapolation_sweep(fast(), (14.52,), data)
    with pytest.raises(DomainError):
        extrapolation_sweep(fast(), (16.0,), data)


def test_uq_bands(data, tmp_path):
    report = run_uq(fast(), "two-step", 3, (14.75, 15.0), data)
    pts = report.uq["two-step"]
    assert [p.n_members for p in pts] == [3, 3]
    assert all(p.std.shape == data.test.y.shape and np.all(p.std >= 0) for p in pts)
    files = write_report(report, tmp_path)
    assert "uq_two-step.csv" in files
    with open(tmp_path / "uq_two-step.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and float(rows[0]["mse_lower"]) <= float(rows[0]["mse_upper"])
