"""Transformer viewer: position-forest decoder with three output heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import BadDim, ShapeMismatch, TargetOutOfRange
from .nn import Conv2d, Embedding, LayerNorm, Linear, Module
from .posforest import D_MAX, RELPOS_CLASSES
from .tensor import Tensor

NEG_INF = -1e9
# floor mass that keeps refined attention rows normalisable when relu zeroes a row
REFINE_FLOOR = 1e-10


@dataclass
class TransformerConfig:
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 128
    layers: int = 3
    d_max: int = D_MAX

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.model_dim % 4:
            raise ValueError("model_dim must be divisible by 4 for the 2-D positional encoding")


@dataclass
class DecoderOutput:
    symbol_logits: Tensor  # (N, T, V)
    depth_logits: Tensor  # (N, T, D_max + 1)
    relpos_logits: Tensor  # (N, T, 3)
    cross_attention: list[np.ndarray]  # per layer (N, heads, T, S), refined


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal table (length, dim): even columns sin, odd columns cos."""
    if dim <= 0 or dim % 2:
        raise BadDim(f"1-D positional encoding needs an even dim, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.exp(-np.log(10000.0) * np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def positional_encoding_2d(height: int, width: int, dim: int) -> np.ndarray:
    """(height, width, dim): first half encodes the row, second half the column."""
    if dim <= 0 or dim % 4:
        raise BadDim(f"2-D positional encoding needs dim divisible by 4, got {dim}")
    half = dim // 2
    rows = positional_encoding(height, half)
    cols = positional_encoding(width, half)
    return np.concatenate(
        [np.broadcast_to(rows[:, None, :], (height, width, half)),
         np.broadcast_to(cols[None, :, :], (height, width, half))],
        axis=-1,
    )


def implicit_attention_refine(raw: Tensor, history: Tensor, transform: Tensor,
                              valid: np.ndarray | None = None) -> Tensor:
    """Correct one step of attention by what earlier steps already covered.

    ``raw`` and ``history`` are (N, heads, S); ``transform`` is a per-head
    weight (heads,) applied to the history. The refined map is
    relu(raw - transform * history), renormalised over S. With zero history
    the output equals ``raw`` up to the 1e-10 floor mass.
    """
    if raw.shape != history.shape or raw.ndim != 3 or transform.shape != (raw.shape[1],):
        raise ShapeMismatch(
            f"refine: raw {raw.shape}, history {history.shape}, transform {transform.shape}"
        )
    n, h, s = raw.shape
    w = T.expand(T.reshape(transform, (1, h, 1)), raw.shape)
    r = T.relu(raw - w * history)
    floor = np.full(raw.shape, REFINE_FLOOR, dtype=raw.dtype)
    if valid is not None:
        keep = np.broadcast_to(valid[:, None, :], raw.shape).astype(raw.dtype)
        r = r * Tensor(keep, dtype=raw.dtype)
        floor = floor * keep
    r = r + Tensor(floor, dtype=raw.dtype)
    total = T.expand(r.sum(axis=2, keepdims=True), raw.shape)
    return r / total


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, t, d = x.shape
    return T.transpose(T.reshape(x, (n, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    n, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (n, t, h * dh))


class MultiHeadAttention(Module):
    def __init__(self, rng, dim: int, heads: int, refine: bool = False):
        self.q = Linear(rng, dim, dim)
        # a key bias shifts every score in a row equally, which softmax ignores
        self.k = Linear(rng, dim, dim, bias=False)
        self.v = Linear(rng, dim, dim)
        self.o = Linear(rng, dim, dim)
        self.heads = heads
        self.refine = refine
        if refine:
            self.refine_weight = T.Tensor(np.zeros(heads), requires_grad=True)

    def __call__(self, query: Tensor, memory: Tensor, mask: np.ndarray,
                 key_valid: np.ndarray | None = None):
        """``mask`` (N, T, S) is True where attention is forbidden."""
        n, t, d = query.shape
        s = memory.shape[1]
        h = self.heads
        q = _split_heads(self.q(query), h)  # (N, h, T, dh)
        k = _split_heads(self.k(memory), h)
        v = _split_heads(self.v(memory), h)
        dh = d // h
        scores = T.matmul(T.reshape(q, (n * h, t, dh)),
                          T.transpose(T.reshape(k, (n * h, s, dh)), (0, 2, 1)))
        scores = T.reshape(scores, (n, h, t, s)) * (1.0 / np.sqrt(dh))
        full_mask = np.broadcast_to(mask[:, None, :, :], (n, h, t, s))
        attn = T.softmax(T.masked_fill(scores, full_mask, NEG_INF), axis=-1)
        if self.refine:
            attn = self._refine_sequence(attn, key_valid)
        ctx = T.matmul(T.reshape(attn, (n * h, t, s)), T.reshape(v, (n * h, s, dh)))
        out = self.o(_merge_heads(T.reshape(ctx, (n, h, t, dh))))
        return out, attn

    def _refine_sequence(self, attn: Tensor, key_valid) -> Tensor:
        n, h, t, s = attn.shape
        history = Tensor(np.zeros((n, h, s), dtype=attn.dtype), dtype=attn.dtype)
        steps = []
        for i in range(t):
            refined = implicit_attention_refine(attn[:, :, i, :], history, self.refine_weight, key_valid)
            steps.append(refined)
            history = history + refined
        return T.stack(steps, axis=2)


class FeedForward(Module):
    def __init__(self, rng, dim: int, hidden: int):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class DecoderLayer(Module):
    def __init__(self, rng, cfg: TransformerConfig):
        self.self_attn = MultiHeadAttention(rng, cfg.model_dim, cfg.heads)
        self.norm1 = LayerNorm(cfg.model_dim)
        self.cross_attn = MultiHeadAttention(rng, cfg.model_dim, cfg.heads, refine=True)
        self.norm2 = LayerNorm(cfg.model_dim)
        self.ffn = FeedForward(rng, cfg.model_dim, cfg.ffn_dim)
        self.norm3 = LayerNorm(cfg.model_dim)

    def __call__(self, x, memory, self_mask, cross_mask, key_valid):
        a, _ = self.self_attn(x, x, self_mask)
        x = self.norm1(x + a)
        c, attn = self.cross_attn(x, memory, cross_mask, key_valid)
        x = self.norm2(x + c)
        x = self.norm3(x + self.ffn(x))
        return x, attn


class TransformerViewer(Module):
    def __init__(self, cfg: TransformerConfig, feature_channels: int, vocab_size: int,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.feature_proj = Conv2d(rng, feature_channels, cfg.model_dim, 1)
        self.memory_norm = LayerNorm(cfg.model_dim)
        self.embed = Embedding(rng, vocab_size, cfg.model_dim)
        self.layers = [DecoderLayer(rng, cfg) for _ in range(cfg.layers)]
        self.symbol_head = Linear(rng, cfg.model_dim, vocab_size)
        self.depth_head = Linear(rng, cfg.model_dim, cfg.d_max + 1)
        self.relpos_head = Linear(rng, cfg.model_dim, len(RELPOS_CLASSES))

    def project(self, features: Tensor) -> Tensor:
        """1x1 channel projection of the backbone map, (N, d, H', W')."""
        return self.feature_proj(features)

    def encode_memory(self, projected: Tensor) -> Tensor:
        """Flatten a projected map to (N, H'W', d) and add the fixed 2-D position code."""
        n, d, hh, ww = projected.shape
        pe = positional_encoding_2d(hh, ww, d).reshape(1, hh * ww, d)
        flat = T.transpose(T.reshape(projected, (n, d, hh * ww)), (0, 2, 1))
        pe_t = Tensor(np.broadcast_to(pe, (n, hh * ww, d)), dtype=projected.dtype)
        return self.memory_norm(flat + pe_t)

    def decode(self, memory: Tensor, memory_valid: np.ndarray, input_ids: np.ndarray) -> DecoderOutput:
        """Teacher-forced pass. ``input_ids`` (N, T) start with sos; ``memory_valid`` is (N, S)."""
        input_ids = np.asarray(input_ids)
        n, t = input_ids.shape
        if memory.shape[0] != n or memory_valid.shape != memory.shape[:2]:
            raise ShapeMismatch(f"memory {memory.shape} / mask {memory_valid.shape} vs ids {input_ids.shape}")
        d = self.cfg.model_dim
        x = self.embed(input_ids) * float(np.sqrt(d))
        pe = positional_encoding(t, d)[None]
        x = x + Tensor(np.broadcast_to(pe, (n, t, d)), dtype=x.dtype)
        causal = np.triu(np.ones((t, t), dtype=bool), k=1)
        self_mask = np.broadcast_to(causal, (n, t, t))
        s = memory.shape[1]
        cross_mask = np.broadcast_to(~memory_valid[:, None, :], (n, t, s))
        attns = []
        for layer in self.layers:
            x, attn = layer(x, memory, self_mask, cross_mask, memory_valid)
            attns.append(attn.data)
        return DecoderOutput(self.symbol_head(x), self.depth_head(x), self.relpos_head(x), attns)


def _masked_nll(logits: Tensor, targets: np.ndarray, valid: np.ndarray) -> tuple[Tensor, int]:
    targets = np.asarray(targets)
    k = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatch(f"targets {targets.shape} vs logits {logits.shape}")
    if np.any(valid & ((targets < 0) | (targets >= k))):
        raise TargetOutOfRange(f"targets outside [0, {k})")
    safe = np.where(valid, targets, 0)
    picked = T.take_last(T.log_softmax(logits, axis=-1), safe)
    w = Tensor(valid.astype(logits.dtype), dtype=logits.dtype)
    return -(picked * w).sum(), int(valid.sum())


def loss_rec(symbol_logits: Tensor, targets: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of the target symbols over unpadded positions."""
    valid = np.ones(np.shape(targets), dtype=bool) if valid is None else np.asarray(valid, bool)
    total, count = _masked_nll(symbol_logits, targets, valid)
    return total * (1.0 / max(count, 1))


def loss_pos(depth_logits: Tensor, relpos_logits: Tensor, depth_targets: np.ndarray,
             relpos_targets: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
    """Depth and relative-position cross-entropies summed per token, averaged over tokens."""
    valid = np.ones(np.shape(depth_targets), dtype=bool) if valid is None else np.asarray(valid, bool)
    d_total, count = _masked_nll(depth_logits, depth_targets, valid)
    r_total, _ = _masked_nll(relpos_logits, relpos_targets, valid)
    return (d_total + r_total) * (1.0 / max(count, 1))
