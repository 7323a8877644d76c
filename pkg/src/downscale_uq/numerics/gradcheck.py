from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NonFiniteError
from .tensor import Tensor


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max over coordinates of |autodiff - central difference| / max(1, |central difference|)."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    out = f(xt)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("non-finite evaluation")
    out.backward()
    auto = xt.grad if xt.grad is not None else np.zeros_like(x)
    numeric = numeric_gradient(lambda a: f(Tensor(a)).item(), x, step)
    if not np.all(np.isfinite(numeric)):
        raise NonFiniteError("non-finite evaluation")
    return float(np.max(np.abs(auto - numeric) / np.maximum(1.0, np.abs(numeric))))
