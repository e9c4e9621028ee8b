"""Small reverse-mode autodiff engine over numpy arrays."""
from .ops import (
    DegenerateBatchError,
    RunningStats,
    ShapeError,
    add,
    attention,
    batchnorm2d,
    conv2d,
    cross_entropy,
    linear,
    log_softmax,
    matmul,
    maxpool2d,
    mean_all,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    sum_all,
    transpose,
)
from .tensor import ContractError, Tape, Tensor, backward

__all__ = [
    "ContractError",
    "DegenerateBatchError",
    "RunningStats",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "attention",
    "backward",
    "batchnorm2d",
    "conv2d",
    "cross_entropy",
    "linear",
    "log_softmax",
    "matmul",
    "maxpool2d",
    "mean_all",
    "mul",
    "relu",
    "reshape",
    "scale",
    "softmax",
    "sum_all",
    "transpose",
]
