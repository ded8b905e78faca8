"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from mflstm.nn import NetworkSpec, backward, init_params, network_forward

FD_STEP = 1e-6


def random_network(rng, max_layers=3, max_width=8):
    n_layers = int(rng.integers(1, max_layers + 1))
    n_lstm = int(rng.integers(0, n_layers + 1))
    p_in = int(rng.integers(1, 4))
    p_out = int(rng.integers(1, 4))
    lstm = tuple(int(rng.integers(1, max_width + 1)) for _ in range(n_lstm))
    n_dense = n_layers - n_lstm
    if n_dense == 0:
        lstm = lstm[:-1] + (p_out,)
        spec = NetworkSpec(p_in, p_out, lstm, ())
    else:
        hidden = tuple(int(rng.integers(1, max_width + 1)) for _ in range(n_dense - 1))
        act = "tanh" if rng.random() < 0.8 else "identity"
        spec = NetworkSpec.build(p_in, p_out, lstm=lstm, hidden=hidden, activation=act)
    params = init_params(spec, rng)
    # non-zero biases so every code path is exercised
    params = params.with_arrays([a + 0.3 * rng.normal(size=a.shape) for a in params.arrays()])
    return spec, params


def loss_fn(spec, params, x, w):
    out, _ = network_forward(spec, params, x)
    return float(np.sum(w * out))


def numeric_gradient(spec, params, x, w, step=FD_STEP):
    theta = params.flat()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        f_plus = loss_fn(spec, params.from_flat(theta), x, w)
        theta[i] = orig - step
        f_minus = loss_fn(spec, params.from_flat(theta), x, w)
        theta[i] = orig
        grad[i] = (f_plus - f_minus) / (2 * step)
    return grad


def analytic_gradient(spec, params, x, w):
    _, cache = network_forward(spec, params, x)
    return backward(spec, params, cache, w).flat()
