"""Report bundle writers. No timestamps or host details are written, so a
rerun with the same configuration produces identical files."""
import csv
import json
from pathlib import Path

import numpy as np

from ..datasets import save_csv
from ..models import save_model


def _num(v):
    if v is None:
        return ""
    return repr(float(v))


def _rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_json(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_error_grid(grid, test, path):
    """Rows are parameter instances, columns are test times."""
    mu_cols = ["mu"] if test.p_mu == 1 else [f"mu_{k + 1}" for k in range(test.p_mu)]
    header = mu_cols + [repr(float(t)) for t in test.times]
    _rows(path, header, [[_num(m) for m in mu] + [_num(v) for v in row] for mu, row in zip(test.mu, grid)])


def read_error_grid(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    n_mu = sum(1 for h in rows[0] if h.startswith("mu"))
    times = np.array([float(h) for h in rows[0][n_mu:]])
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    return body[:, :n_mu], times, body[:, n_mu:]


def write_report(report, out_dir, save_models=True):
    """Write the bundle for ``report`` under ``out_dir``; returns the file list."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def done(name):
        written.append(name)
        return out / name

    write_json(report.to_dict(), done("report.json"))
    write_json(report.provenance(), done("provenance.json"))
    if report.results:
        _rows(done("mse_table.csv"), ["model", "test_mse", "status"],
              [[n, _num(m), s] for n, m, s in report.mse_table()])
        save_csv(report.data.test, done("test.csv"))
        written.append("test.json")
        for name, res in report.results.items():
            if res.status != "ok":
                continue
            write_error_grid(res.grid, report.data.test, done(f"error_grid_{name}.csv"))
            if save_models:
                save_model(res.model, done(f"model_{name}.json"))
    for name, pts in report.sweep.items():
        _rows(done(f"sweep_{name}.csv"), ["tstar", "test_mse", "status"],
              [[_num(p.tstar), _num(p.mse), p.status] for p in pts])
    for name, pts in report.uq.items():
        _rows(done(f"uq_{name}.csv"),
              ["tstar", "n_members", "mse_mean", "mse_std", "mse_lower", "mse_upper", "status"],
              [[_num(p.tstar), p.n_members, _num(p.mse_mean), _num(p.mse_std),
                _num(None if p.mse_mean is None else p.mse_mean - p.mse_std),
                _num(None if p.mse_mean is None else p.mse_mean + p.mse_std), p.status] for p in pts])
        test = report.data.test
        for p in pts:
            if p.mean is None:
                continue
            rows = []
            for j, mu in enumerate(test.mu):
                for n, t in enumerate(test.times):
                    rows.append([_num(m) for m in mu] + [_num(t)]
                                + [_num(v) for k in range(test.p_out)
                                   for v in (p.mean[j, n, k], p.std[j, n, k])])
            header = (["mu"] if test.p_mu == 1 else [f"mu_{k + 1}" for k in range(test.p_mu)]) + ["t"]
            header += [c for k in range(test.p_out) for c in (f"mean_{k + 1}", f"std_{k + 1}")]
            _rows(done(f"uq_band_{name}_tstar{p.tstar:g}.csv"), header, rows)
    return written
