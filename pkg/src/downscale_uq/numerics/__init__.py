"""Dense float64 tensors with reverse-mode autodiff, convolutions and Adam."""

from .gradcheck import grad_check, numeric_gradient
from .optim import AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    avg_pool2d,
    concat,
    conv2d,
    exp,
    log,
    matmul,
    mul,
    power,
    relu,
    reshape,
    tanh,
    tmean,
    transpose,
    tsum,
    upsample_nearest2d,
)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from a scalar loss."""
    loss.backward()


__all__ = [
    "AdamState", "Tensor", "adam_step", "add", "as_tensor", "avg_pool2d", "backward", "concat",
    "conv2d", "exp", "grad_check", "log", "matmul", "mul", "numeric_gradient", "power", "relu",
    "reshape", "tanh", "tmean", "transpose", "tsum", "upsample_nearest2d",
]
