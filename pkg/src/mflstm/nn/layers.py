"""LSTM and dense layers with hand-derived reverse-mode gradients.

Weight matrices act on the concatenation ``[h_prev, x]`` (recurrent state
first), so every LSTM gate matrix has shape ``hidden x (hidden + input)``.
Batched arrays are laid out as ``(n_batch, K, features)``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import DomainError, NumericError, ShapeError, StateError

GATES = ("f", "u", "o", "c")
ACTIVATIONS = ("tanh", "identity")


def sigmoid(z):
    return expit(z)


@dataclass
class LstmCellParams:
    W_f: np.ndarray
    W_u: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    b_f: np.ndarray
    b_u: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    def __post_init__(self):
        for name in ("W_f", "W_u", "W_o", "W_c", "b_f", "b_u", "b_o", "b_c"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        shape = self.W_f.shape
        if self.W_f.ndim != 2:
            raise ShapeError(f"LSTM weights must be 2-D, got {shape}")
        hidden = shape[0]
        if shape[1] <= hidden:
            raise ShapeError(f"LSTM weight shape {shape} leaves no input columns")
        for g in GATES:
            if getattr(self, "W_" + g).shape != shape:
                raise ShapeError(f"W_{g} has shape {getattr(self, 'W_' + g).shape}, expected {shape}")
            if getattr(self, "b_" + g).shape != (hidden,):
                raise ShapeError(f"b_{g} must have length {hidden}")

    @property
    def hidden_size(self):
        return self.W_f.shape[0]

    @property
    def input_size(self):
        return self.W_f.shape[1] - self.W_f.shape[0]

    def arrays(self):
        return {name: getattr(self, name) for name in self.names()}

    @staticmethod
    def names():
        return ("W_f", "W_u", "W_o", "W_c", "b_f", "b_u", "b_o", "b_c")

    @classmethod
    def zeros(cls, input_size, hidden_size):
        W = np.zeros((hidden_size, hidden_size + input_size))
        b = np.zeros(hidden_size)
        return cls(*(W.copy() for _ in GATES), *(b.copy() for _ in GATES))

    def stacked(self):
        """Gate weights stacked row-wise as ``(4*hidden, hidden+input)`` plus biases."""
        W = np.concatenate([self.W_f, self.W_u, self.W_o, self.W_c], axis=0)
        b = np.concatenate([self.b_f, self.b_u, self.b_o, self.b_c])
        return W, b


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.h.shape != self.c.shape:
            raise ShapeError(f"h {self.h.shape} and c {self.c.shape} differ in shape")

    @classmethod
    def zeros(cls, hidden_size, n_batch=None):
        shape = (hidden_size,) if n_batch is None else (n_batch, hidden_size)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class DenseLayerParams:
    W: np.ndarray
    b: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"dense shapes W{self.W.shape} b{self.b.shape} inconsistent")

    def arrays(self):
        return {"W": self.W, "b": self.b}

    @staticmethod
    def names():
        return ("W", "b")


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite value in layer input")


def lstm_cell_forward(x, state, params):
    """Advance one LSTM step.

    ``x`` may be a single vector or a ``(n_batch, input)`` block; ``state``
    must match. Returns ``(h, c, cache)`` where ``cache`` keeps the gate
    activations and the concatenated input needed by the backward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    H = params.hidden_size
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"input has {x.shape[-1]} features, cell expects {params.input_size}")
    if state.h.shape[-1] != H or state.h.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"state shape {state.h.shape} incompatible with hidden size {H}")
    _check_finite(x, state.h, state.c)

    W, b = params.stacked()
    z = np.concatenate([state.h, x], axis=-1)
    a = z @ W.T + b
    F = sigmoid(a[..., :H])
    U = sigmoid(a[..., H:2 * H])
    O = sigmoid(a[..., 2 * H:3 * H])
    C = np.tanh(a[..., 3 * H:])
    c = F * state.c + U * C
    tc = np.tanh(c)
    h = O * tc
    cache = {"z": z, "F": F, "U": U, "O": O, "C": C, "c_prev": state.c, "c": c, "tanh_c": tc}
    return h, c, cache


@dataclass
class LstmLayerCache:
    # time-major storage so each step reads a contiguous (B, .) slab
    inputs: np.ndarray   # (B, K, I)
    h: np.ndarray        # (K+1, B, H), slot 0 holds the initial state
    c: np.ndarray
    gates: np.ndarray    # (K, B, 4H) post-activation F, U, O, C
    tanh_c: np.ndarray   # (K, B, H)
    params_id: int = field(default=0, repr=False)


def lstm_layer_forward(inputs, params, initial_state=None):
    """Run the cell along the K axis of an ``(n_batch, K, input)`` block.

    Returns the hidden sequence ``(n_batch, K, hidden)`` and a cache for
    :func:`lstm_layer_backward`.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3:
        raise ShapeError(f"expected a rank-3 batch, got shape {inputs.shape}")
    B, K, n_in = inputs.shape
    if B == 0 or K == 0:
        raise DomainError("empty batch")
    if n_in != params.input_size:
        raise ShapeError(f"input has {n_in} features, layer expects {params.input_size}")
    _check_finite(inputs)
    H = params.hidden_size

    W, b = params.stacked()
    WhT = np.ascontiguousarray(W[:, :H].T)
    ax = np.ascontiguousarray((inputs @ W[:, H:].T + b).transpose(1, 0, 2))

    h = np.zeros((K + 1, B, H))
    c = np.zeros((K + 1, B, H))
    if initial_state is not None:
        h[0] = initial_state.h
        c[0] = initial_state.c
    gates = np.empty((K, B, 4 * H))
    tanh_c = np.empty((K, B, H))
    for n in range(K):
        a = ax[n] + h[n] @ WhT
        g = gates[n]
        g[:, :3 * H] = expit(a[:, :3 * H])
        np.tanh(a[:, 3 * H:], out=g[:, 3 * H:])
        c[n + 1] = g[:, :H] * c[n] + g[:, H:2 * H] * g[:, 3 * H:]
        np.tanh(c[n + 1], out=tanh_c[n])
        h[n + 1] = g[:, 2 * H:3 * H] * tanh_c[n]

    cache = LstmLayerCache(inputs, h, c, gates, tanh_c, id(params))
    return h[1:].transpose(1, 0, 2), cache


def lstm_layer_backward(d_hidden, cache, params):
    """Backpropagate through time.

    ``d_hidden`` is the loss gradient w.r.t. the layer's hidden sequence.
    Returns ``(grads, d_inputs)`` with ``grads`` an :class:`LstmCellParams`.
    """
    if cache is None or cache.params_id != id(params):
        raise StateError("LSTM cache does not belong to these parameters")
    B, K, H = d_hidden.shape
    W, _ = params.stacked()
    Wh = np.ascontiguousarray(W[:, :H])
    d_hidden = d_hidden.transpose(1, 0, 2)

    da = np.empty((K, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for n in range(K - 1, -1, -1):
        g = cache.gates[n]
        F, U, O, C = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = cache.tanh_c[n]
        dh = d_hidden[n] + dh_next
        dc = dc_next + dh * O * (1.0 - tc * tc)
        dan = da[n]
        dan[:, :H] = dc * cache.c[n] * F * (1.0 - F)
        dan[:, H:2 * H] = dc * C * U * (1.0 - U)
        dan[:, 2 * H:3 * H] = dh * tc * O * (1.0 - O)
        dan[:, 3 * H:] = dc * U * (1.0 - C * C)
        dc_next = dc * F
        dh_next = dan @ Wh

    # weight gradients accumulated in one contraction over (time, batch)
    flat = da.reshape(K * B, 4 * H)
    z = np.concatenate([cache.h[:-1], cache.inputs.transpose(1, 0, 2)], axis=-1)
    dW = flat.T @ z.reshape(K * B, -1)
    db = flat.sum(axis=0)
    d_inputs = (da @ W[:, H:]).transpose(1, 0, 2)

    grads = LstmCellParams(*np.split(dW, 4, axis=0), *np.split(db, 4))
    return grads, d_inputs


def dense_forward(inputs, params):
    pre = inputs @ params.W.T + params.b
    out = np.tanh(pre) if params.activation == "tanh" else pre
    return out, (inputs, out)


def dense_backward(d_out, cache, params):
    inputs, out = cache
    d_pre = d_out * (1.0 - out * out) if params.activation == "tanh" else d_out
    flat = d_pre.reshape(-1, d_pre.shape[-1])
    dW = flat.T @ inputs.reshape(-1, inputs.shape[-1])
    db = flat.sum(axis=0)
    d_in = d_pre @ params.W
    return DenseLayerParams(dW, db, params.activation), d_in
