"""Command-line entry point.

Exit status: 0 on success, 2 on usage errors, 3 on invalid configuration
(the message names the field), 1 on any other failure.
"""
import argparse
import json
import os
import sys
from pathlib import Path

from ..datasets import load_csv, save_csv, test_mse
from ..errors import MflstmError, ParseError
from ..hpo import CvObjective, HyperSpace, TrainingSets, adaptive_search, random_search, write_trial_log, \
    write_winner
from ..models import load_model, predict_dataset, save_model
from .config import BENCHMARKS, MODEL_NAMES, ConfigError, ExperimentConfig, load_config, parse_pairs
from .experiment import TEST_FIDELITY, build_data, error_grid, extrapolation_sweep, run_comparison, run_uq, \
    train_named
from .presets import model_settings, sampling
from .report import write_error_grid, write_json, write_report

ENV_OUTPUT = "MFLSTM_OUTPUT_DIR"
DEFAULT_OUTPUT = "mflstm-output"


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (key = value lines)")
    common.add_argument("--benchmark", choices=BENCHMARKS)
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", help=f"output directory (default: ${ENV_OUTPUT} or ./{DEFAULT_OUTPUT})")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config entry; may be repeated")

    p = argparse.ArgumentParser(prog="mflstm", description="Multi-fidelity LSTM surrogates.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write one dataset as CSV")
    g.add_argument("--fidelity", choices=("lf", "hf", "test"), required=True)

    t = sub.add_parser("train", parents=[common], help="train one model and save it")
    t.add_argument("--model", choices=MODEL_NAMES, required=True)
    t.add_argument("--lf-data", help="LF training CSV (default: generate from the config)")
    t.add_argument("--hf-data", help="HF training CSV (default: generate from the config)")

    e = sub.add_parser("evaluate", parents=[common], help="score a saved model on a dataset")
    e.add_argument("--model-file", required=True)
    e.add_argument("--data", required=True, help="dataset CSV")

    sub.add_parser("compare", parents=[common], help="train and compare the configured models")

    s = sub.add_parser("sweep", parents=[common], help="time-extrapolation sweep over t*")
    s.add_argument("--tstar", help="comma-separated final training times")
    s.add_argument("--mode", choices=("both", "hf-only"), help="which fidelities are truncated")

    h = sub.add_parser("hpo", parents=[common], help="hyperparameter search")
    h.add_argument("--model", choices=MODEL_NAMES)
    h.add_argument("--budget", type=int)
    h.add_argument("--method", choices=("random", "adaptive"))
    h.add_argument("--folds", type=int)
    h.add_argument("--epochs", type=int)
    h.add_argument("--timing", action="store_true", help="also write per-trial wall times")

    u = sub.add_parser("uq", parents=[common], help="ensemble bands from retrained final networks")
    u.add_argument("--model", choices=MODEL_NAMES)
    u.add_argument("--members", type=int)
    u.add_argument("--tstar", help="comma-separated final training times (default: T)")
    return p


def _split_set(items):
    pairs = []
    for item in items:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def resolve_config(args, extra=()):
    try:
        base = load_config(args.config) if args.config else None
    except ParseError as exc:
        raise ConfigError(args.config, str(exc)) from None
    pairs = []
    if args.benchmark:
        pairs.append(("benchmark", args.benchmark))
    if args.seed is not None:
        pairs.append(("seed", str(args.seed)))
    pairs += list(extra)
    pairs += _split_set(args.set)
    return parse_pairs(pairs, base)


def output_dir(args, config):
    d = args.output_dir or config.output_dir or os.environ.get(ENV_OUTPUT) or DEFAULT_OUTPUT
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_generate(args, config, out):
    ds = getattr(build_data(config), args.fidelity)
    path = out / f"{config.benchmark}_{args.fidelity}.csv"
    save_csv(ds, path)
    print(f"wrote {path} ({ds.n_mu} parameter instances x {ds.n_t} times)")


def _cmd_train(args, config, out):
    if args.lf_data or args.hf_data:
        if not (args.lf_data and args.hf_data):
            raise ConfigError("train", "give both --lf-data and --hf-data")
        lf, hf = load_csv(args.lf_data), load_csv(args.hf_data)
    else:
        data = build_data(config)
        lf, hf = data.lf, data.hf
    model = train_named(config, args.model, lf, hf, config.seed)
    path = out / f"model_{args.model}.json"
    save_model(model, path)
    print(f"wrote {path}")


def _cmd_evaluate(args, config, out):
    model = load_model(args.model_file)
    ds = load_csv(args.data)
    mse = test_mse(predict_dataset(model, ds), ds.y)
    stem = Path(args.model_file).stem
    write_error_grid(error_grid(model, ds), ds, out / f"error_grid_{stem}.csv")
    write_json({"model": stem, "data_digest": ds.digest(), "test_mse": mse}, out / f"evaluation_{stem}.json")
    print(f"test_mse {mse!r}")


def _print_table(report):
    for name, mse, status in report.mse_table():
        print(f"{name:16s} {'' if mse is None else format(mse, '.6g'):>14s} {status}")


def _cmd_compare(args, config, out):
    report = run_comparison(config)
    write_report(report, out)
    _print_table(report)
    return 1 if report.partial else 0


def _floats(text, flag):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(flag, f"invalid number list {text!r}") from None


def _cmd_sweep(args, config, out):
    report = extrapolation_sweep(config, _floats(args.tstar, "tstar") if args.tstar else None)
    write_report(report, out)
    for name, pts in report.sweep.items():
        print(name + ": " + ", ".join(f"{p.tstar:g}->{'failed' if p.mse is None else format(p.mse, '.4g')}"
                                      for p in pts))
    return 1 if report.partial else 0


def _cmd_hpo(args, config, out):
    data = build_data(config)
    name = config.hpo_model
    kind = {"lf-ff": "single", "hf-ff": "single", "lf-lstm": "single", "hf-lstm": "single",
            "two-step": "two-step", "three-step": "three-step", "three-step-ff": "three-step",
            "intermediate": "intermediate"}[name]
    cfg = sampling(config)
    stages, _ = model_settings(config, name)
    if name in ("lf-ff", "lf-lstm"):
        sets = TrainingSets(data.lf)
    elif kind == "single":
        sets = TrainingSets(data.hf)
    else:
        sets = TrainingSets(data.hf, data.lf)
    space = HyperSpace(alpha=(0.0, 1.0) if kind == "intermediate" else None)
    objective = CvObjective(sets, kind, config.hpo_folds, config.hpo_epochs, cfg.K, cfg.stride, config.seed,
                            lf_plan=stages.get("LF"))
    search = random_search if config.hpo_method == "random" else adaptive_search
    best, log = search(space, config.hpo_budget, objective, seed=config.seed)
    write_trial_log(log, out / "hpo_trials.csv", out / "hpo_timing.csv" if args.timing else None)
    write_winner(best, log, config.hpo_method, out / "hpo_winner.json")
    print(json.dumps({"objective": best.objective, "point": best.point.to_dict()}, sort_keys=True))


def _cmd_uq(args, config, out):
    tstars = _floats(args.tstar, "tstar") if args.tstar else None
    report = run_uq(config, tstars=tstars)
    write_report(report, out)
    for name, pts in report.uq.items():
        for p in pts:
            print(f"{name} t*={p.tstar:g}: mse {p.mse_mean} +- {p.mse_std} ({p.status})")
    return 1 if report.partial else 0


COMMANDS = {"generate": _cmd_generate, "train": _cmd_train, "evaluate": _cmd_evaluate,
            "compare": _cmd_compare, "sweep": _cmd_sweep, "hpo": _cmd_hpo, "uq": _cmd_uq}


def _command_pairs(args):
    pairs = []
    if args.command == "sweep" and args.mode:
        pairs.append(("sweep_mode", args.mode))
    if args.command == "hpo":
        for flag, key in (("model", "hpo_model"), ("budget", "hpo_budget"), ("method", "hpo_method"),
                          ("folds", "hpo_folds"), ("epochs", "hpo_epochs")):
            if getattr(args, flag) is not None:
                pairs.append((key, str(getattr(args, flag))))
    if args.command == "uq":
        if args.model:
            pairs.append(("uq_model", args.model))
        if args.members is not None:
            pairs.append(("uq_members", str(args.members)))
    return pairs


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        config = resolve_config(args, _command_pairs(args))
        out = output_dir(args, config)
        code = COMMANDS[args.command](args, config, out)
    except ConfigError as exc:
        print(f"mflstm: config error: {exc}", file=sys.stderr)
        return 3
    except (MflstmError, OSError) as exc:
        print(f"mflstm: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
