"""Time-parameter datasets, windowed batches, min-max scaling and CSV I/O."""
import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, EvaluationError, ParseError, ShapeError

FORMAT_VERSION = "mflstm.dataset/1"
UNIFORM_RTOL = 1e-12


def uniform_grid(times):
    """Return ``(t0, dt, n_t)`` for a strictly increasing uniform grid."""
    times = np.asarray(times, dtype=np.float64).ravel()
    if times.size == 0:
        raise DomainError("empty time grid")
    if times.size == 1:
        return float(times[0]), 1.0, 1
    steps = np.diff(times)
    dt = (times[-1] - times[0]) / (times.size - 1)
    if not np.all(steps > 0):
        raise DomainError("time grid must be strictly increasing")
    scale = max(abs(times[0]), abs(times[-1]), dt)
    if np.max(np.abs(times - (times[0] + dt * np.arange(times.size)))) > UNIFORM_RTOL * scale * 10:
        raise DomainError("time grid is not uniform")
    return float(times[0]), float(dt), int(times.size)


@dataclass
class TimeParamDataset:
    """Outputs ``y[j, n, :]`` sampled at parameter ``mu[j]`` and time ``t0 + n*dt``."""

    fidelity: str
    mu: np.ndarray
    t0: float
    dt: float
    y: np.ndarray
    domain: np.ndarray = None
    T: float = None

    def __post_init__(self):
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        if self.mu.shape[0] == 1 and self.mu.shape[1] > 1 and np.ndim(self.y) == 3 \
                and np.shape(self.y)[0] == self.mu.shape[1]:
            self.mu = self.mu.T  # a flat list of scalar parameters
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 2:
            self.y = self.y[..., None]
        if self.y.ndim != 3 or self.y.shape[0] != self.mu.shape[0]:
            raise ShapeError(f"outputs {self.y.shape} do not match {self.mu.shape[0]} parameter instances")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.mu)):
            raise DomainError("dataset contains non-finite values")
        if not self.dt > 0:
            raise DomainError("time step must be positive")
        self.t0, self.dt = float(self.t0), float(self.dt)
        if self.domain is None:
            self.domain = np.stack([self.mu.min(axis=0), self.mu.max(axis=0)], axis=1)
        self.domain = np.asarray(self.domain, dtype=np.float64).reshape(self.p_mu, 2)
        tol = 1e-12 * np.maximum(1.0, np.abs(self.domain))
        if np.any(self.mu < self.domain[:, 0] - tol[:, 0]) or np.any(self.mu > self.domain[:, 1] + tol[:, 1]):
            raise DomainError("parameter instance outside the declared domain")

    @property
    def n_mu(self):
        return self.mu.shape[0]

    @property
    def n_t(self):
        return self.y.shape[1]

    @property
    def p_mu(self):
        return self.mu.shape[1]

    @property
    def p_in(self):
        return self.p_mu + 1

    @property
    def p_out(self):
        return self.y.shape[2]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_t)

    def inputs(self):
        """Input features ``(t, mu)`` for every sample, shape ``N_mu x N_t x p_in``."""
        t = np.broadcast_to(self.times[None, :, None], (self.n_mu, self.n_t, 1))
        m = np.broadcast_to(self.mu[:, None, :], (self.n_mu, self.n_t, self.p_mu))
        return np.concatenate([t, m], axis=-1)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return TimeParamDataset(self.fidelity, self.mu[indices], self.t0, self.dt,
                                self.y[indices], self.domain, self.T)

    def truncate(self, t_max):
        """Keep only samples with ``t <= t_max`` (relative tolerance on the grid)."""
        keep = int(np.floor((t_max - self.t0) / self.dt + 1e-9)) + 1
        if keep < 1:
            raise DomainError(f"t_max={t_max} precedes the first sample")
        keep = min(keep, self.n_t)
        return TimeParamDataset(self.fidelity, self.mu, self.t0, self.dt, self.y[:, :keep],
                                self.domain, self.T)

    def digest(self):
        h = hashlib.sha256()
        h.update(json.dumps(self.metadata(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.mu).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()

    def metadata(self):
        return {
            "format": FORMAT_VERSION,
            "fidelity": self.fidelity,
            "t0": self.t0,
            "dt": self.dt,
            "n_t": self.n_t,
            "p_mu": self.p_mu,
            "p_out": self.p_out,
            "domain": self.domain.tolist(),
            "T": self.T,
        }

    def equals(self, other):
        return (self.metadata() == other.metadata()
                and np.array_equal(self.mu, other.mu) and np.array_equal(self.y, other.y))


def build_grid_dataset(mu_values, times, evaluator, fidelity="HF", domain=None, T=None,
                       vectorized=False):
    """Evaluate ``evaluator`` on the tensor grid of parameters and times.

    With ``vectorized=False`` the evaluator is called as ``evaluator(t, mu)``
    and returns ``p_out`` values. With ``vectorized=True`` it is called once
    per parameter as ``evaluator(mu, times)`` and returns ``N_t x p_out``.
    """
    mu_values = np.asarray(mu_values, dtype=np.float64)
    if mu_values.ndim == 1:
        mu_values = mu_values[:, None]
    times = np.asarray(times, dtype=np.float64)
    t0, dt, n_t = uniform_grid(times)
    rows = []
    for mu in mu_values:
        m = mu if mu.size > 1 else float(mu[0])
        if vectorized:
            try:
                traj = np.asarray(evaluator(m, times), dtype=np.float64).reshape(n_t, -1)
            except Exception as exc:
                raise EvaluationError(m, None, exc) from exc
            bad = np.where(~np.all(np.isfinite(traj), axis=1))[0]
            if bad.size:
                raise EvaluationError(m, float(times[bad[0]]), "non-finite output")
            rows.append(traj)
            continue
        traj = []
        for t in times:
            try:
                v = np.atleast_1d(np.asarray(evaluator(float(t), m), dtype=np.float64))
            except Exception as exc:
                raise EvaluationError(m, float(t), exc) from exc
            if not np.all(np.isfinite(v)):
                raise EvaluationError(m, float(t), "non-finite output")
            traj.append(v)
        rows.append(np.stack(traj))
    return TimeParamDataset(fidelity, mu_values, t0, dt, np.stack(rows), domain, T)


# -- subsequences ----------------------------------------------------------

def window_offsets(n_t, K, stride):
    """Offsets 0, stride, 2*stride, ... plus a last window clamped to end at ``n_t - 1``.

    A stride longer than ``K`` would skip samples, so it is reduced to ``K``.
    """
    if K < 1 or K > n_t:
        raise DomainError(f"window length K={K} must lie in [1, {n_t}]")
    if stride < 1:
        raise DomainError("stride must be >= 1")
    stride = min(stride, K)
    offsets = list(range(0, n_t - K + 1, stride))
    if offsets[-1] + K < n_t:
        offsets.append(n_t - K)
    return offsets


@dataclass
class SequenceBatch:
    inputs: np.ndarray       # n_batch x K x p_in
    outputs: np.ndarray      # n_batch x K x p_out
    provenance: np.ndarray = field(default=None)  # n_batch x 2: (parameter index, window offset)

    def __post_init__(self):
        if self.inputs.ndim != 3 or self.outputs.ndim != 3 or self.inputs.shape[:2] != self.outputs.shape[:2]:
            raise ShapeError(f"batch blocks {self.inputs.shape} / {self.outputs.shape} inconsistent")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def K(self):
        return self.inputs.shape[1]

    def take(self, idx):
        prov = None if self.provenance is None else self.provenance[idx]
        return SequenceBatch(self.inputs[idx], self.outputs[idx], prov)


def make_subsequences(dataset, K, stride=None, inputs=None, outputs=None):
    """Cut every parameter trajectory into windows of length ``K``.

    ``inputs``/``outputs`` override the dataset's own ``(t, mu)`` features and
    targets (same leading ``N_mu x N_t`` shape), which is how normalized or
    augmented features are batched.
    """
    stride = K if stride is None else stride
    offsets = window_offsets(dataset.n_t, K, stride)
    x = dataset.inputs() if inputs is None else inputs
    y = dataset.y if outputs is None else outputs
    xs, ys, prov = [], [], []
    for j in range(dataset.n_mu):
        for o in offsets:
            xs.append(x[j, o:o + K])
            ys.append(y[j, o:o + K])
            prov.append((j, o))
    return SequenceBatch(np.stack(xs), np.stack(ys), np.array(prov, dtype=int))


def concat_batches(batches):
    return SequenceBatch(np.concatenate([b.inputs for b in batches]),
                         np.concatenate([b.outputs for b in batches]),
                         None)


# -- normalization ---------------------------------------------------------

@dataclass
class MinMaxScaler:
    """Affine map of each feature onto [-1, 1]; constant features map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(self.hi < self.lo):
            raise DomainError("scaler max below min")

    @classmethod
    def fit(cls, data):
        data = np.asarray(data, dtype=np.float64)
        flat = data.reshape(-1, data.shape[-1])
        return cls(flat.min(axis=0), flat.max(axis=0))

    @property
    def _span(self):
        span = self.hi - self.lo
        return np.where(span > 0, span, 1.0)

    def apply(self, x):
        z = 2.0 * (np.asarray(x, dtype=np.float64) - self.lo) / self._span - 1.0
        return np.where(self.hi > self.lo, z, 0.0)

    def invert(self, z):
        return (np.asarray(z, dtype=np.float64) + 1.0) * 0.5 * (self.hi - self.lo) + self.lo

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lo"], d["hi"])


@dataclass
class Normalizer:
    inputs: MinMaxScaler
    outputs: MinMaxScaler

    def apply(self, batch):
        return SequenceBatch(self.inputs.apply(batch.inputs), self.outputs.apply(batch.outputs),
                             batch.provenance)

    def invert(self, batch):
        return SequenceBatch(self.inputs.invert(batch.inputs), self.outputs.invert(batch.outputs),
                             batch.provenance)

    def to_dict(self):
        return {"inputs": self.inputs.to_dict(), "outputs": self.outputs.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(MinMaxScaler.from_dict(d["inputs"]), MinMaxScaler.from_dict(d["outputs"]))


def fit_input_scaler(datasets):
    """Scaler for ``(t, mu)`` fitted on the union of several datasets."""
    feats = np.concatenate([d.inputs().reshape(-1, d.p_in) for d in datasets])
    return MinMaxScaler.fit(feats)


def fit_normalizer(dataset, input_datasets=None):
    """Output statistics from ``dataset``; input statistics from the union of
    ``input_datasets`` (defaults to ``dataset`` alone)."""
    sources = [dataset] if input_datasets is None else list(input_datasets)
    return Normalizer(fit_input_scaler(sources), MinMaxScaler.fit(dataset.y))


# -- metric ----------------------------------------------------------------

def test_mse(predictions, targets):
    """Mean over test points of the squared Euclidean error.

    The last axis holds the ``p_out`` outputs of one point; every leading axis
    enumerates test points.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {y.shape}")
    if p.ndim == 1:
        p, y = p[:, None], y[:, None]
    d = (y - p).reshape(-1, p.shape[-1])
    return float(np.sum(d * d) / d.shape[0])


test_mse.__test__ = False  # not a pytest test when imported into test modules


# -- CSV persistence -------------------------------------------------------

def csv_header(p_mu, p_out):
    return [f"mu_{i + 1}" for i in range(p_mu)] + ["t"] + [f"y_{i + 1}" for i in range(p_out)]


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def save_csv(dataset, path):
    """Write ``path`` (one row per sample) and its JSON metadata sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    times = dataset.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(dataset.p_mu, dataset.p_out))
        for j in range(dataset.n_mu):
            mu = [f"{v:.17g}" for v in dataset.mu[j]]
            for n in range(dataset.n_t):
                w.writerow(mu + [f"{times[n]:.17g}"] + [f"{v:.17g}" for v in dataset.y[j, n]])
    with open(sidecar_path(path), "w") as fh:
        json.dump(dataset.metadata(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_csv(path):
    """Read a dataset written by :func:`save_csv` (sidecar optional)."""
    path = Path(path)
    meta = None
    side = sidecar_path(path)
    if side.exists():
        with open(side) as fh:
            meta = json.load(fh)
        if meta.get("format") != FORMAT_VERSION:
            raise ParseError(f"{side}: unsupported dataset format {meta.get('format')!r}")

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", line=1)
    header = [h.strip() for h in rows[0]]
    if meta is not None:
        expected = csv_header(meta["p_mu"], meta["p_out"])
    else:
        if "t" not in header:
            raise ParseError("header has no 't' column", line=1)
        p_mu = header.index("t")
        expected = csv_header(p_mu, len(header) - p_mu - 1)
    if header != expected:
        raise ParseError(f"header {header} does not match expected columns {expected}", line=1)
    p_mu = expected.index("t")

    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise ParseError(f"expected {len(expected)} fields, found {len(row)}", line=lineno)
        try:
            values.append([float(v) for v in row])
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", line=lineno) from None
    if not values:
        raise ParseError("no data rows", line=2)
    arr = np.array(values)

    # group consecutive rows sharing a parameter vector
    groups, start = [], 0
    for i in range(1, arr.shape[0] + 1):
        if i == arr.shape[0] or not np.array_equal(arr[i, :p_mu], arr[start, :p_mu]):
            groups.append((start, i))
            start = i
    n_t = groups[0][1] - groups[0][0]
    for s, e in groups:
        if e - s != n_t:
            raise ParseError(f"parameter block has {e - s} rows, expected {n_t}", line=s + 2)
    times = arr[groups[0][0]:groups[0][1], p_mu]
    try:
        t0, dt, _ = uniform_grid(times)
    except DomainError as exc:
        raise ParseError(str(exc), line=2) from None
    if meta is not None:
        t0, dt = meta["t0"], meta["dt"]
        if n_t != meta["n_t"]:
            raise ParseError(f"found {n_t} time rows per parameter, metadata says {meta['n_t']}", line=2)
    for s, e in groups:
        if not np.allclose(arr[s:e, p_mu], times, rtol=0, atol=1e-12 * max(1.0, abs(times).max())):
            raise ParseError("time column differs between parameter blocks", line=s + 2)

    mu = np.array([arr[s, :p_mu] for s, _ in groups])
    y = np.stack([arr[s:e, p_mu + 1:] for s, e in groups])
    if meta is not None:
        return TimeParamDataset(meta["fidelity"], mu, t0, dt, y, meta["domain"], meta.get("T"))
    return TimeParamDataset("unknown", mu, t0, dt, y)
