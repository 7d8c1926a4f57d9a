"""Central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, eps: float, coords=None) -> np.ndarray:
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    # fn().data is read at full width; .item() would round to float64 first
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn().data.reshape(-1)[0]
        flat[i] = orig - eps
        lo = fn().data.reshape(-1)[0]
        flat[i] = orig
        out[i] = (hi - lo) / (2 * eps)
    return out.reshape(x.shape)


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    reference_dtype=None,
) -> float:
    """Max relative error between backward() and central differences.

    ``fn`` closes over ``inputs`` and returns a scalar; the inputs are
    perturbed in place. With ``max_coords`` only a seeded random subset of
    each input's coordinates is compared (for models with many parameters).
    ``reference_dtype`` (e.g. ``np.longdouble``) evaluates the differences in
    a wider type, so rounding in the loss does not swamp tiny gradients.
    """
    for x in inputs:
        x.grad = None
    fn().backward()
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.astype(np.float64) for x in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    saved = [x.data for x in inputs]
    try:
        if reference_dtype is not None:
            for x in inputs:
                x.data = x.data.astype(reference_dtype)
        with T.precision(reference_dtype or T.default_dtype()):
            for x, a in zip(inputs, analytic):
                coords = None
                if max_coords is not None and x.size > max_coords:
                    coords = np.sort(rng.choice(x.size, size=max_coords, replace=False))
                num = numeric_grad(fn, x, eps, coords)
                if coords is None:
                    err = relative_error(a, num)
                else:
                    err = relative_error(a.reshape(-1)[coords], num.reshape(-1)[coords])
                if err.size:
                    worst = max(worst, float(err.max()))
    finally:
        for x, data in zip(inputs, saved):
            x.data = data
    return worst
