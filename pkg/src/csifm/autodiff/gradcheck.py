"""Central finite-difference oracle for tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """d fn() / d x by central differences, perturbing ``x.data`` in place."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn().item()
            flat[i] = orig - step
            fm = fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Worst elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_gradients(fn: Callable[[], Tensor], inputs: dict[str, Tensor],
                    step: float = 1e-5, floor: float = 1e-4) -> dict[str, float]:
    """Worst relative error per input between backward() and finite differences."""
    for x in inputs.values():
        x.grad = None
    fn().backward()
    analytic = {k: (x.grad.copy() if x.grad is not None else np.zeros_like(x.data))
                for k, x in inputs.items()}
    return {k: relative_error(analytic[k], numerical_grad(fn, x, step), floor)
            for k, x in inputs.items()}
