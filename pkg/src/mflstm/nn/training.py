"""Mini-batch training loop."""
from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ConfigurationError, DomainError, TrainingDiverged
from .network import backward, init_params, mse_loss, mse_loss_grad, network_forward
from .optim import OptimizerState, clip_by_global_norm, optimizer_step


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    seed: int = 0
    validation_fraction: float = 0.0
    clip_norm: float = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in [0, 1)")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigurationError("clip_norm must be positive")

    def to_dict(self):
        return asdict(self)


def epoch_batches(rng, n, batch_size):
    """Shuffled mini-batch index arrays; batch size is clamped to ``n``."""
    order = rng.permutation(n)
    bs = min(batch_size, n)
    return [order[i:i + bs] for i in range(0, n, bs)]


def _unpack(data):
    if hasattr(data, "inputs"):
        return np.asarray(data.inputs, dtype=np.float64), np.asarray(data.outputs, dtype=np.float64)
    x, y = data
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)


def gradient_step(spec, params, opt_state, x, y, clip_norm=None):
    out, cache = network_forward(spec, params, x)
    loss = mse_loss(out, y)
    grads = backward(spec, params, cache, mse_loss_grad(out, y))
    if clip_norm is not None:
        grads = clip_by_global_norm(grads, clip_norm)
    params, opt_state = optimizer_step(params, grads, opt_state)
    return params, opt_state, loss


def train(spec, data, config, params=None):
    """Fit ``spec`` to ``data`` (a SequenceBatch or an ``(inputs, outputs)`` pair).

    Initialization and shuffling both draw from ``config.seed`` so two runs
    with the same arguments produce bit-identical parameters. ``params``
    overrides the Glorot initialization.

    Returns ``(params, history)``; ``history["loss"]`` holds the per-epoch
    mean mini-batch loss, ``initial_loss``/``final_loss`` the full-data loss
    before and after training.
    """
    x, y = _unpack(data)
    if x.shape[0] == 0:
        raise DomainError("empty training set")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(spec, rng)
    else:
        params = params.copy()

    n = x.shape[0]
    val_idx = np.array([], dtype=int)
    train_idx = np.arange(n)
    if config.validation_fraction > 0 and n > 1:
        n_val = max(1, int(round(config.validation_fraction * n)))
        perm = rng.permutation(n)
        val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])

    def full_loss(p, idx):
        out, _ = network_forward(spec, p, x[idx])
        return mse_loss(out, y[idx])

    history = {"loss": [], "val_loss": [], "initial_loss": full_loss(params, train_idx)}
    opt = OptimizerState(config.optimizer, config.lr)
    for epoch in range(config.epochs):
        total = 0.0
        for batch in epoch_batches(rng, train_idx.size, config.batch_size):
            idx = train_idx[batch]
            params, opt, loss = gradient_step(spec, params, opt, x[idx], y[idx], config.clip_norm)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            total += loss * idx.size
        history["loss"].append(total / train_idx.size)
        if val_idx.size:
            history["val_loss"].append(full_loss(params, val_idx))
    final = full_loss(params, train_idx)
    if not np.isfinite(final):
        raise TrainingDiverged(config.epochs)
    history["final_loss"] = final
    return params, history
