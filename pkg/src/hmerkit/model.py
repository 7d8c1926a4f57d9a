"""The two-viewer model: shared backbone, Transformer viewer, CNN counting viewer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig, DenseNet, feature_mask
from .cnn_viewer import CoverageDecoder, MultiScaleCounting, SingleScaleCounting
from .counting import count_vector, smooth_l1
from .data import ExprSample
from .latex import Vocab
from .nn import Module
from .posforest import RELPOS_INDEX
from .tensor import Tensor
from .transformer import TransformerConfig, TransformerViewer, loss_pos, loss_rec

MODES = ("baseline", "task1", "multiview", "multiview_task2")


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    counting_hidden: int = 64
    count_dim: int = 64
    channel_attention: bool = True
    ccad_hidden: int = 64
    ccad_embed: int = 32
    ccad_attn: int = 32


@dataclass
class Flags:
    """Ablation switches; each implies the one before it."""

    task1_on: bool = True
    multi_view_on: bool = True
    task2_on: bool = False

    def __post_init__(self):
        if self.task2_on and not self.multi_view_on:
            raise ValueError("task2_on requires multi_view_on")
        if self.multi_view_on and not self.task1_on:
            raise ValueError("multi_view_on requires task1_on")

    @classmethod
    def from_mode(cls, mode: str) -> "Flags":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        return cls(
            task1_on=mode != "baseline",
            multi_view_on=mode in ("multiview", "multiview_task2"),
            task2_on=mode == "multiview_task2",
        )

    @property
    def mode(self) -> str:
        if self.task2_on:
            return "multiview_task2"
        if self.multi_view_on:
            return "multiview"
        return "task1" if self.task1_on else "baseline"


@dataclass
class Batch:
    ids: list[str]
    images: np.ndarray  # (N, 1, H, W)
    widths: np.ndarray  # (N,) unpadded pixel widths
    input_ids: np.ndarray  # (N, L) sos + tokens, padded
    target_ids: np.ndarray  # (N, L) tokens + eos, padded
    valid: np.ndarray  # (N, L) bool
    depths: np.ndarray  # (N, L)
    relpos: np.ndarray  # (N, L)
    counts: np.ndarray  # (N, n_classes)
    tokens: list[list[str]]


def collate(samples: list[ExprSample], vocab: Vocab, images: list[np.ndarray] | None = None) -> Batch:
    imgs = [s.image for s in samples] if images is None else images
    h = max(im.shape[0] for im in imgs)
    w = max(im.shape[1] for im in imgs)
    n = len(samples)
    batch_img = np.zeros((n, 1, h, w), dtype=np.float32)
    widths = np.zeros(n, dtype=np.int64)
    for i, im in enumerate(imgs):
        batch_img[i, 0, : im.shape[0], : im.shape[1]] = im
        widths[i] = im.shape[1]
    length = max(len(s.tokens) for s in samples) + 1
    inp = np.full((n, length), vocab.pad, dtype=np.int64)
    tgt = np.full((n, length), vocab.pad, dtype=np.int64)
    dep = np.zeros((n, length), dtype=np.int64)
    rel = np.zeros((n, length), dtype=np.int64)
    valid = np.zeros((n, length), dtype=bool)
    counts = np.zeros((n, vocab.n_classes), dtype=np.float32)
    for i, s in enumerate(samples):
        ids = [vocab.index(t) for t in s.tokens]
        k = len(ids)
        inp[i, : k + 1] = [vocab.sos] + ids
        tgt[i, : k + 1] = ids + [vocab.eos]
        # eos sits at the root level
        dep[i, :k] = s.labels.depths
        rel[i, :k] = [RELPOS_INDEX[r] for r in s.labels.relpos]
        valid[i, : k + 1] = True
        counts[i] = count_vector(s.tokens, vocab)
    return Batch([s.sample_id for s in samples], batch_img, widths, inp, tgt, valid, dep, rel,
                 counts, [list(s.tokens) for s in samples])


@dataclass
class Losses:
    rec: Tensor
    pos: Tensor
    counting: Tensor | None
    ccad: Tensor | None


class HMERModel(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocab, flags: Flags, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.vocab = vocab
        self.flags = flags
        self.backbone = DenseNet(cfg.backbone, rng)
        c = self.backbone.out_channels
        self.transformer = TransformerViewer(cfg.transformer, c, len(vocab), rng)
        self.mscm = None
        self.counter = None
        self.ccad = None
        if flags.multi_view_on:
            self.mscm = MultiScaleCounting(rng, c, vocab.n_classes, cfg.counting_hidden, cfg.count_dim,
                                           use_gate=cfg.channel_attention)
        elif flags.task1_on:
            self.counter = SingleScaleCounting(rng, cfg.transformer.model_dim, vocab.n_classes)
        if flags.task2_on:
            self.ccad = CoverageDecoder(rng, c, len(vocab), cfg.count_dim, cfg.ccad_hidden,
                                        cfg.ccad_embed, cfg.ccad_attn)

    def named_parameters(self, prefix: str = ""):
        for name in ("backbone", "transformer", "mscm", "counter", "ccad"):
            mod = getattr(self, name)
            if mod is not None:
                yield from mod.named_parameters(f"{prefix}{name}.")

    # --- forward -------------------------------------------------------------
    def encode(self, images: np.ndarray, widths: np.ndarray):
        x = Tensor(images)
        features = self.backbone(x)
        valid_cols = feature_mask(widths, images.shape[3], self.cfg.backbone.total_stride)
        return features, valid_cols

    def memory(self, features: Tensor, valid_cols: np.ndarray):
        projected = self.transformer.project(features)
        memory = self.transformer.encode_memory(projected)
        n, _, h, w = features.shape
        mem_valid = np.broadcast_to(valid_cols[:, None, :], (n, h, w)).reshape(n, h * w)
        return projected, memory, mem_valid

    def losses(self, batch: Batch) -> Losses:
        features, valid_cols = self.encode(batch.images, batch.widths)
        projected, memory, mem_valid = self.memory(features, valid_cols)
        out = self.transformer.decode(memory, mem_valid, batch.input_ids)
        l_rec = loss_rec(out.symbol_logits, batch.target_ids, batch.valid)
        l_pos = loss_pos(out.depth_logits, out.relpos_logits, batch.depths, batch.relpos, batch.valid)
        l_count = None
        l_ccad = None
        if self.mscm is not None:
            m = self.mscm(features, valid_cols)
            l_count = smooth_l1(m.count_pred, batch.counts)
            if self.ccad is not None:
                logits = self.ccad(features, m.count_feature, batch.input_ids, valid_cols)
                l_ccad = loss_rec(logits, batch.target_ids, batch.valid)
        elif self.counter is not None:
            l_count = smooth_l1(self.counter(projected, valid_cols), batch.counts)
        return Losses(l_rec, l_pos, l_count, l_ccad)

    def predict_counts(self, images: np.ndarray, widths: np.ndarray) -> np.ndarray | None:
        with T.no_grad():
            features, valid_cols = self.encode(images, widths)
            if self.mscm is not None:
                return self.mscm(features, valid_cols).count_pred.data
            if self.counter is not None:
                projected = self.transformer.project(features)
                return self.counter(projected, valid_cols).data
        return None

    def greedy_decode(self, images: np.ndarray, widths: np.ndarray, max_len: int = 64):
        """Argmax decoding until eos. Returns (token lists, truncated flags)."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        vocab = self.vocab
        with T.no_grad():
            features, valid_cols = self.encode(images, widths)
            _, memory, mem_valid = self.memory(features, valid_cols)
            n = images.shape[0]
            ids = np.full((n, 1), vocab.sos, dtype=np.int64)
            done = np.zeros(n, dtype=bool)
            out: list[list[int]] = [[] for _ in range(n)]
            for _ in range(max_len):
                logits = self.transformer.decode(memory, mem_valid, ids).symbol_logits.data[:, -1, :]
                nxt = logits.argmax(axis=-1)  # first maximum wins ties
                for i in range(n):
                    if done[i]:
                        continue
                    if nxt[i] == vocab.eos:
                        done[i] = True
                    else:
                        out[i].append(int(nxt[i]))
                if done.all():
                    break
                ids = np.concatenate([ids, nxt[:, None]], axis=1)
        tokens = [[vocab.entries[j] for j in seq] for seq in out]
        return tokens, ~done
