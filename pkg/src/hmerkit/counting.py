"""Per-class symbol counts and the smooth-L1 counting loss."""
from __future__ import annotations

from collections import Counter
from typing import Sequence

import numpy as np

from .errors import LengthMismatch
from .latex import Vocab
from .tensor import Tensor, apply_op


def count_vector(tokens: Sequence[str], vocab: Vocab) -> np.ndarray:
    """Multiplicity of every symbol class in ``tokens`` (reserved ids excluded)."""
    counts = np.zeros(vocab.n_classes, dtype=np.int64)
    for tok, n in Counter(tokens).items():
        counts[vocab.index(tok)] += n
    return counts


def counts_to_dict(counts: np.ndarray, vocab: Vocab) -> dict[str, int]:
    return {vocab.classes[i]: int(c) for i, c in enumerate(counts) if c}


def dict_to_counts(mapping: dict[str, int], vocab: Vocab) -> np.ndarray:
    counts = np.zeros(vocab.n_classes, dtype=np.int64)
    for tok, n in mapping.items():
        counts[vocab.index(tok)] = n
    return counts


def _smooth_l1_terms(d: np.ndarray, beta: float) -> np.ndarray:
    ad = np.abs(d)
    return np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)


def smooth_l1(pred, target, beta: float = 1.0):
    """Mean over entries of the smooth-L1 penalty on ``pred - target``.

    Quadratic (0.5 d^2) for |d| < 1, linear (|d| - 0.5) beyond. Accepts
    numpy arrays (returns a float) or a prediction Tensor (returns a scalar
    Tensor wired into the graph; ``target`` is treated as a constant).
    """
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if p.shape != t.shape:
        raise LengthMismatch(f"smooth_l1: prediction {p.shape} vs target {t.shape}")
    d = p - t.astype(p.dtype)
    value = _smooth_l1_terms(d, beta).mean()
    if not isinstance(pred, Tensor):
        return float(value)
    n = d.size
    slope = np.where(np.abs(d) < beta, d / beta, np.sign(d))

    def backward(g):
        return (g * slope / n,)

    return apply_op(np.asarray(value, dtype=p.dtype), (pred,), backward)
