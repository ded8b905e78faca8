"""Stacked LSTM + dense networks: specification, parameters, forward, backward."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ParseError, ShapeError, StateError
from .layers import (
    ACTIVATIONS,
    DenseLayerParams,
    LstmCellParams,
    dense_backward,
    dense_forward,
    lstm_layer_backward,
    lstm_layer_forward,
)

FORMAT_VERSION = "mflstm.network/1"


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a sequence-to-sequence regressor.

    ``dense_layers`` lists every dense width in order; the last one is the
    output layer (identity activation) and must equal ``output_dim``. Hidden
    dense layers use ``activation``. With no dense layers the last LSTM
    hidden state is the output.
    """

    input_dim: int
    output_dim: int
    lstm_layers: tuple = ()
    dense_layers: tuple = ()
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "lstm_layers", tuple(int(w) for w in self.lstm_layers))
        object.__setattr__(self, "dense_layers", tuple(int(w) for w in self.dense_layers))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigurationError("input_dim and output_dim must be positive")
        if any(w < 1 for w in self.lstm_layers + self.dense_layers):
            raise ConfigurationError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.dense_layers:
            if self.dense_layers[-1] != self.output_dim:
                raise ConfigurationError(
                    f"last dense width {self.dense_layers[-1]} != output_dim {self.output_dim}")
        elif not self.lstm_layers:
            raise ConfigurationError("network needs at least one layer")
        elif self.lstm_layers[-1] != self.output_dim:
            raise ConfigurationError("without dense layers the last LSTM width must equal output_dim")

    @classmethod
    def build(cls, input_dim, output_dim, lstm=(), hidden=(), activation="tanh"):
        """Spec with hidden dense widths ``hidden`` followed by a linear output layer."""
        return cls(input_dim, output_dim, tuple(lstm), tuple(hidden) + (output_dim,), activation)

    def layer_shapes(self):
        shapes = []
        width = self.input_dim
        for h in self.lstm_layers:
            shapes.append(("lstm", width, h))
            width = h
        for i, w in enumerate(self.dense_layers):
            last = i == len(self.dense_layers) - 1
            shapes.append(("dense", width, w, "identity" if last else self.activation))
            width = w
        return shapes

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "lstm_layers": list(self.lstm_layers),
            "dense_layers": list(self.dense_layers),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_dim"], d["output_dim"], tuple(d["lstm_layers"]),
                   tuple(d["dense_layers"]), d.get("activation", "tanh"))

    def n_params(self):
        total = 0
        for shape in self.layer_shapes():
            if shape[0] == "lstm":
                _, i, h = shape
                total += 4 * (h * (h + i) + h)
            else:
                _, i, o, _ = shape
                total += o * i + o
        return total


@dataclass
class NetworkParams:
    lstm: list = field(default_factory=list)
    dense: list = field(default_factory=list)

    def layers(self):
        return list(self.lstm) + list(self.dense)

    def arrays(self):
        """Every trainable array in a fixed order."""
        out = []
        for layer in self.layers():
            out.extend(layer.arrays().values())
        return out

    def with_arrays(self, arrays):
        """New params of the same structure built from ``arrays`` (order of :meth:`arrays`)."""
        it = iter(arrays)
        lstm = [LstmCellParams(*(next(it) for _ in LstmCellParams.names())) for _ in self.lstm]
        dense = [DenseLayerParams(next(it), next(it), d.activation) for d in self.dense]
        return NetworkParams(lstm, dense)

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self, vec):
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(np.asarray(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        return self.with_arrays(arrays)

    def check(self, spec):
        shapes = spec.layer_shapes()
        if len(shapes) != len(self.lstm) + len(self.dense):
            raise ConfigurationError("parameter layer count does not match the network spec")
        for shape, layer in zip(shapes, self.layers()):
            if shape[0] == "lstm":
                if not isinstance(layer, LstmCellParams) or (layer.input_size, layer.hidden_size) != shape[1:]:
                    raise ConfigurationError(f"LSTM layer does not match spec entry {shape}")
            else:
                if not isinstance(layer, DenseLayerParams) or layer.W.shape != (shape[2], shape[1]) \
                        or layer.activation != shape[3]:
                    raise ConfigurationError(f"dense layer does not match spec entry {shape}")


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(spec, rng):
    """Glorot-uniform weights, zero biases."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    lstm, dense = [], []
    for shape in spec.layer_shapes():
        if shape[0] == "lstm":
            _, i, h = shape
            Ws = [glorot_uniform(rng, h, h + i) for _ in range(4)]
            lstm.append(LstmCellParams(*Ws, *(np.zeros(h) for _ in range(4))))
        else:
            _, i, o, act = shape
            dense.append(DenseLayerParams(glorot_uniform(rng, o, i), np.zeros(o), act))
    return NetworkParams(lstm, dense)


def zeros_like_params(params):
    return params.with_arrays([np.zeros_like(a) for a in params.arrays()])


@dataclass
class NetworkCache:
    lstm: list
    dense: list
    hidden: list  # hidden sequence emitted by each LSTM layer
    params_id: int


def _as_inputs(batch):
    return getattr(batch, "inputs", batch)


def network_forward(spec, params, batch):
    """Apply the LSTM stack then the dense layers timestep-wise.

    ``batch`` is a :class:`~mflstm.datasets.SequenceBatch` or a raw
    ``(n_batch, K, input_dim)`` array. Returns ``(outputs, cache)``.
    """
    params.check(spec)
    x = np.asarray(_as_inputs(batch), dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] != spec.input_dim:
        raise ShapeError(f"batch shape {x.shape} incompatible with input_dim {spec.input_dim}")
    lstm_caches, dense_caches, hidden = [], [], []
    for layer in params.lstm:
        x, c = lstm_layer_forward(x, layer)
        lstm_caches.append(c)
        hidden.append(x)
    for layer in params.dense:
        x, c = dense_forward(x, layer)
        dense_caches.append(c)
    return x, NetworkCache(lstm_caches, dense_caches, hidden, id(params))


def backward(spec, params, cache, loss_gradient, hidden_gradients=None):
    """Gradients of the loss w.r.t. every parameter.

    ``loss_gradient`` is dL/d(output) with the output's shape (``None`` for
    zero). ``hidden_gradients`` optionally maps an LSTM layer index to an extra
    gradient on that layer's hidden sequence, which is how side read-outs
    attached to intermediate layers feed back into the trunk.
    """
    if cache is None or not isinstance(cache, NetworkCache):
        raise StateError("missing forward cache")
    if cache.params_id != id(params) or len(cache.lstm) != len(params.lstm) \
            or len(cache.dense) != len(params.dense):
        raise StateError("forward cache does not match these parameters")
    hidden_gradients = hidden_gradients or {}

    if params.dense:
        out_shape = cache.dense[-1][1].shape
    else:
        out_shape = cache.hidden[-1].shape
    g = np.zeros(out_shape) if loss_gradient is None else np.asarray(loss_gradient, dtype=np.float64)
    if g.shape != out_shape:
        raise ShapeError(f"loss gradient shape {g.shape} != output shape {out_shape}")

    dense_grads = [None] * len(params.dense)
    for i in range(len(params.dense) - 1, -1, -1):
        dense_grads[i], g = dense_backward(g, cache.dense[i], params.dense[i])
    lstm_grads = [None] * len(params.lstm)
    for i in range(len(params.lstm) - 1, -1, -1):
        if i in hidden_gradients:
            g = g + hidden_gradients[i]
        lstm_grads[i], g = lstm_layer_backward(g, cache.lstm[i], params.lstm[i])
    return NetworkParams(lstm_grads, dense_grads)


def mse_loss(pred, target):
    """Mean over every batch, time and output entry of the squared error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_loss_grad(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return 2.0 * (pred - target) / pred.size


def predict_sequences(spec, params, inputs):
    out, _ = network_forward(spec, params, inputs)
    return out


# -- serialization ---------------------------------------------------------

def params_to_dict(spec, params):
    params.check(spec)
    layers = []
    for layer in params.lstm:
        entry = {"kind": "lstm", "input": layer.input_size, "hidden": layer.hidden_size}
        entry.update({k: v.ravel().tolist() for k, v in layer.arrays().items()})
        layers.append(entry)
    for layer in params.dense:
        layers.append({"kind": "dense", "shape": list(layer.W.shape), "activation": layer.activation,
                       "W": layer.W.ravel().tolist(), "b": layer.b.tolist()})
    return {"format": FORMAT_VERSION, "spec": spec.to_dict(), "layers": layers}


def params_from_dict(doc):
    """Inverse of :func:`params_to_dict`; returns ``(spec, params)``."""
    if doc.get("format") != FORMAT_VERSION:
        raise ParseError(f"unsupported network format {doc.get('format')!r}, expected {FORMAT_VERSION}")
    spec = NetworkSpec.from_dict(doc["spec"])
    lstm, dense = [], []
    for entry in doc["layers"]:
        if entry["kind"] == "lstm":
            i, h = entry["input"], entry["hidden"]
            arrs = []
            for name in LstmCellParams.names():
                shape = (h, h + i) if name.startswith("W") else (h,)
                arrs.append(np.array(entry[name], dtype=np.float64).reshape(shape))
            lstm.append(LstmCellParams(*arrs))
        elif entry["kind"] == "dense":
            shape = tuple(entry["shape"])
            dense.append(DenseLayerParams(np.array(entry["W"], dtype=np.float64).reshape(shape),
                                          np.array(entry["b"], dtype=np.float64), entry["activation"]))
        else:
            raise ParseError(f"unknown layer kind {entry['kind']!r}")
    params = NetworkParams(lstm, dense)
    params.check(spec)
    return spec, params
