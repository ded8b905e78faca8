from .layers import (
    DenseLayerParams,
    LstmCellParams,
    LstmState,
    dense_backward,
    dense_forward,
    lstm_cell_forward,
    lstm_layer_backward,
    lstm_layer_forward,
    sigmoid,
)
from .network import (
    NetworkCache,
    NetworkParams,
    NetworkSpec,
    backward,
    glorot_uniform,
    init_params,
    mse_loss,
    mse_loss_grad,
    network_forward,
    params_from_dict,
    params_to_dict,
    zeros_like_params,
)
from .optim import OptimizerState, clip_by_global_norm, optimizer_step
from .training import TrainConfig, epoch_batches, gradient_step, train

__all__ = [
    "DenseLayerParams", "LstmCellParams", "LstmState", "NetworkCache", "NetworkParams",
    "NetworkSpec", "OptimizerState", "TrainConfig", "backward", "clip_by_global_norm",
    "dense_backward", "dense_forward", "epoch_batches", "glorot_uniform", "gradient_step",
    "init_params",
    "lstm_cell_forward", "lstm_layer_backward", "lstm_layer_forward", "mse_loss",
    "mse_loss_grad", "network_forward", "optimizer_step", "params_from_dict",
    "params_to_dict", "sigmoid", "train", "zeros_like_params",
]
