"""Autodiff core, dense network, optimizer, checkpoints and training loop."""
from .checkpoint import FORMAT_VERSION, MAGIC, Checkpoint
from .network import (DenseBlock, DenseNet, NetworkConfig, Transition, dense_block,
                      transition)
from .optim import OptimizerState, adam_step
from .tensor import (Tensor, avg_pool2, batch_norm, concat, conv2d, dropout, elu,
                     global_avg_pool, linear, softmax, softmax_cross_entropy)
from .training import EvalResult, evaluate, fine_tune, images_to_input, predict_logits, train

__all__ = [
    "FORMAT_VERSION", "MAGIC", "Checkpoint", "DenseBlock", "DenseNet", "EvalResult",
    "NetworkConfig", "OptimizerState", "Tensor", "Transition", "adam_step", "avg_pool2",
    "batch_norm", "concat", "conv2d", "dense_block", "dropout", "elu", "evaluate", "fine_tune",
    "global_avg_pool", "images_to_input", "linear", "predict_logits", "softmax",
    "softmax_cross_entropy", "train", "transition",
]
