"""CNN viewer: multi-scale counting module and the coverage-attention GRU decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .nn import Conv2d, Embedding, GRUCell, Linear, Module, zeros
from .tensor import Tensor
from .transformer import NEG_INF


class ChannelAttention(Module):
    """Squeeze-and-excitation gate: sigmoid(W2 relu(W1 avgpool(x))) per channel."""

    def __init__(self, rng, channels: int, ratio: int = 4):
        hidden = max(1, channels // ratio)
        self.fc1 = Linear(rng, channels, hidden)
        self.fc2 = Linear(rng, hidden, channels)

    def gate(self, x: Tensor) -> Tensor:
        return T.sigmoid(self.fc2(T.relu(self.fc1(T.avg_pool2d(x)))))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ShapeMismatch(f"channel attention expects (N, C, H, W), got {x.shape}")
        g = self.gate(x)
        n, c, h, w = x.shape
        return x * T.expand(T.reshape(g, (n, c, 1, 1)), x.shape)


class CountingBranch(Module):
    def __init__(self, rng, c_in: int, hidden: int, n_classes: int, kernel: int, use_gate: bool = True):
        self.conv = Conv2d(rng, c_in, hidden, kernel)
        self.attention = ChannelAttention(rng, hidden)
        self.proj = Conv2d(rng, hidden, n_classes, 1)
        self.kernel = kernel
        self.use_gate = use_gate

    def count_map(self, features: Tensor) -> Tensor:
        x = T.relu(self.conv(features))
        if self.use_gate:
            x = self.attention(x)
        return T.sigmoid(self.proj(x))

    def __call__(self, features: Tensor, valid: np.ndarray | None = None) -> Tensor:
        m = self.count_map(features)
        if valid is not None:
            m = m * Tensor(_cell_mask(valid, m.shape), dtype=m.dtype)
        return T.sum_pool2d(m)


def _cell_mask(valid_cols: np.ndarray, shape) -> np.ndarray:
    """Broadcast an (N, W') column mask to an (N, C, H', W') map."""
    n, c, h, w = shape
    return np.broadcast_to(valid_cols[:, None, None, :], (n, c, h, w)).astype(np.float64)


@dataclass
class MscmOutput:
    count_pred: Tensor  # (N, n_classes), non-negative
    count_feature: Tensor  # (N, count_dim)


class MultiScaleCounting(Module):
    """Two parallel k x k branches (3 and 5) whose sum-pooled count maps are averaged."""

    def __init__(self, rng, c_in: int, n_classes: int, hidden: int = 64, count_dim: int = 64,
                 kernels: tuple[int, int] = (3, 5), use_gate: bool = True):
        self.branch_a = CountingBranch(rng, c_in, hidden, n_classes, kernels[0], use_gate)
        self.branch_b = CountingBranch(rng, c_in, hidden, n_classes, kernels[1], use_gate)
        self.feature = Linear(rng, n_classes, count_dim)
        self.n_classes = n_classes

    def set_gate(self, on: bool) -> None:
        self.branch_a.use_gate = on
        self.branch_b.use_gate = on

    def __call__(self, features: Tensor, valid: np.ndarray | None = None) -> MscmOutput:
        if features.ndim != 4:
            raise ShapeMismatch(f"counting module expects (N, C, H, W), got {features.shape}")
        counts = (self.branch_a(features, valid) + self.branch_b(features, valid)) * 0.5
        return MscmOutput(counts, self.feature(counts))


class SingleScaleCounting(Module):
    """Counting head used without the CNN viewer: 1x1 conv, sigmoid, sum pooling."""

    def __init__(self, rng, c_in: int, n_classes: int):
        self.proj = Conv2d(rng, c_in, n_classes, 1)

    def __call__(self, features: Tensor, valid: np.ndarray | None = None) -> Tensor:
        m = T.sigmoid(self.proj(features))
        if valid is not None:
            m = m * Tensor(_cell_mask(valid, m.shape), dtype=m.dtype)
        return T.sum_pool2d(m)


@dataclass
class CoverageState:
    coverage: Tensor  # (N, 1, H', W') summed attention
    hidden: Tensor  # (N, hidden)


class CoverageDecoder(Module):
    """GRU decoder with coverage attention, conditioned on the count feature."""

    def __init__(self, rng, c_in: int, vocab_size: int, count_dim: int,
                 hidden: int = 64, embed_dim: int = 32, attn_dim: int = 32, coverage_kernel: int = 5):
        self.embed = Embedding(rng, vocab_size, embed_dim)
        self.feat_proj = Conv2d(rng, c_in, attn_dim, 1)
        self.hidden_proj = Linear(rng, hidden, attn_dim, bias=False)
        self.coverage_conv = Conv2d(rng, 1, attn_dim, coverage_kernel, bias=False)
        self.energy = Conv2d(rng, attn_dim, 1, 1, bias=False)
        self.gru = GRUCell(rng, embed_dim + c_in + count_dim, hidden)
        self.out = Linear(rng, hidden, vocab_size)
        self.h0 = zeros((hidden,))
        self.hidden_size = hidden

    def init_state(self, features: Tensor) -> CoverageState:
        n, c, h, w = features.shape
        cov = Tensor(np.zeros((n, 1, h, w)), dtype=features.dtype)
        hid = T.expand(T.reshape(self.h0, (1, self.hidden_size)), (n, self.hidden_size))
        return CoverageState(cov, hid)

    def step(self, state: CoverageState, features: Tensor, count_feature: Tensor,
             prev_ids: np.ndarray, valid: np.ndarray | None = None,
             feat_key: Tensor | None = None):
        """One decoding step -> (logits (N, V), attention (N, H', W'), new state)."""
        n, c, h, w = features.shape
        if state.coverage.shape != (n, 1, h, w):
            raise ShapeMismatch(f"coverage {state.coverage.shape} vs features {features.shape}")
        a_dim = self.feat_proj.weight.shape[0]
        key = self.feat_proj(features) if feat_key is None else feat_key
        q = T.expand(T.reshape(self.hidden_proj(state.hidden), (n, a_dim, 1, 1)), (n, a_dim, h, w))
        energy = self.energy(T.tanh(key + q + self.coverage_conv(state.coverage)))
        energy = T.reshape(energy, (n, h * w))
        if valid is not None:
            cell_valid = np.broadcast_to(valid[:, None, :], (n, h, w)).reshape(n, h * w)
            energy = T.masked_fill(energy, ~cell_valid, NEG_INF)
        alpha = T.softmax(energy, axis=-1)
        flat = T.transpose(T.reshape(features, (n, c, h * w)), (0, 2, 1))
        context = T.reshape(T.matmul(T.reshape(alpha, (n, 1, h * w)), flat), (n, c))
        emb = self.embed(prev_ids)
        hidden = self.gru(T.concat([emb, context, count_feature], axis=1), state.hidden)
        logits = self.out(hidden)
        attn_map = T.reshape(alpha, (n, 1, h, w))
        return logits, T.reshape(alpha, (n, h, w)), CoverageState(state.coverage + attn_map, hidden)

    def __call__(self, features: Tensor, count_feature: Tensor, input_ids: np.ndarray,
                 valid: np.ndarray | None = None) -> Tensor:
        """Teacher-forced logits (N, T, V)."""
        state = self.init_state(features)
        key = self.feat_proj(features)
        steps = []
        for t in range(input_ids.shape[1]):
            logits, _, state = self.step(state, features, count_feature, input_ids[:, t], valid, key)
            steps.append(logits)
        return T.stack(steps, axis=1)
