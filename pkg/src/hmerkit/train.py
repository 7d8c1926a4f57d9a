"""Joint multi-task training: weighted loss, Adam with warmup/cosine, checkpointed fit loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from . import config as config_io
from . import tensor as T
from .data import ExprSample, corpus_vocab, load_manifest, overfit_set, rescale_content, synth_corpus
from .errors import ConfigError, NonFiniteGrad, NonFiniteLoss
from .latex import Vocab
from .metrics import MetricsReport, evaluate
from .model import Flags, HMERModel, ModelConfig, collate
from .tensor import Tensor

log = logging.getLogger("hmerkit.train")

SCALE_RANGE = (0.7, 1.4)


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.1

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    flags: Flags = field(default_factory=Flags)
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.05
    clip_norm: float = 1.0
    batch_size: int = 8
    max_steps: int = 2000
    seed: int = 0
    checkpoint_every: int = 500
    eval_every: int = 250
    # stop once validation ExpRate reaches this percentage; 0 disables
    stop_exprate: float = 0.0
    scale_aug: bool = False
    decode_max_len: int = 64

    def __post_init__(self):
        if self.batch_size < 1 or self.max_steps < 1:
            raise ValueError("batch_size and max_steps must be >= 1")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ValueError("lr and clip_norm must be positive")


@dataclass
class DataConfig:
    """Where training data comes from. Empty manifest paths fall back to the synthetic grammar."""

    train_manifest: str = ""
    val_manifest: str = ""
    synth_seed: int = 0
    synth_n: int = 64
    synth_max_depth: int = 2


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str = "runs/default"


def load_run_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    run = RunConfig() if path is None else config_io.load(path, RunConfig())
    if overrides:
        run = config_io.apply(run, overrides)
    return run


def load_datasets(data: DataConfig) -> tuple[list[ExprSample], list[ExprSample]]:
    if data.train_manifest:
        train = load_manifest(data.train_manifest)
    elif (data.synth_seed, data.synth_n, data.synth_max_depth) == (0, 64, 2):
        train = overfit_set()
    else:
        train = synth_corpus(data.synth_seed, data.synth_n, data.synth_max_depth)
    val = load_manifest(data.val_manifest) if data.val_manifest else train
    return train, val


# --- loss ---------------------------------------------------------------------

def _value(x) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)


def total_loss(l_rec, l_pos, l_counting, w: LossWeights | None = None, flags: Flags | None = None,
               l_ccad=None):
    """lambda1*rec + lambda2*pos + lambda3*counting (+ lambda1*ccad when Task2 is on).

    Works on floats or scalar Tensors. Components switched off by ``flags``, or
    passed as None, are left out of the sum entirely.
    """
    w = w or LossWeights()
    terms = [(w.lambda1, l_rec, "l_rec"), (w.lambda2, l_pos, "l_pos")]
    if l_counting is not None and (flags is None or flags.task1_on):
        terms.append((w.lambda3, l_counting, "l_counting"))
    if l_ccad is not None and (flags is None or flags.task2_on):
        terms.append((w.lambda1, l_ccad, "l_ccad"))
    values = {name: _value(x) for _, x, name in terms}
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise NonFiniteLoss(f"non-finite loss components {bad}")
    total = None
    for weight, x, _ in terms:
        if weight == 0:
            continue
        term = x * weight
        total = term if total is None else total + term
    if total is None:
        return 0.0
    return total


# --- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Linear warmup over the first warmup_frac of steps, then cosine decay to zero."""
    warm = max(1, int(round(cfg.warmup_frac * cfg.max_steps)))
    if step < warm:
        return cfg.lr * (step + 1) / warm
    span = max(1, cfg.max_steps - warm)
    progress = min(1.0, (step - warm) / span)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def grad_norm(params: dict[str, Tensor]) -> float:
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(sq)


def optimizer_step(params: dict[str, Tensor], state: AdamState, lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = None) -> float:
    """One bias-corrected Adam update from ``p.grad``; returns the pre-clip gradient norm.

    Parameters without a gradient are left untouched.
    """
    norm = grad_norm(params)
    if not math.isfinite(norm):
        bad = [n for n, p in params.items() if p.grad is not None and not np.all(np.isfinite(p.grad))]
        raise NonFiniteGrad(f"non-finite gradients in {bad[:5]}")
    scale = 1.0
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / (norm + 1e-12)
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad * scale if scale != 1.0 else p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)
    return norm


# --- evaluation ---------------------------------------------------------------

def predict_tokens(model: HMERModel, samples: Sequence[ExprSample], batch_size: int = 16,
                   max_len: int = 64) -> list[list[str]]:
    """Greedy transcriptions in input order; batches are formed from width-sorted samples."""
    order = sorted(range(len(samples)), key=lambda i: samples[i].image.shape[1])
    out: list[list[str]] = [[] for _ in samples]
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        batch = collate([samples[i] for i in idx], model.vocab)
        tokens, _ = model.greedy_decode(batch.images, batch.widths, max_len)
        for i, toks in zip(idx, tokens):
            out[i] = toks
    return out


def evaluate_model(model: HMERModel, samples: Sequence[ExprSample], max_len: int = 64) -> MetricsReport:
    preds = predict_tokens(model, samples, max_len=max_len)
    return evaluate(preds, [s.tokens for s in samples])


# --- checkpoints ----------------------------------------------------------------

def build_model(run: RunConfig, vocab: Vocab) -> HMERModel:
    return HMERModel(run.model, vocab, run.train.flags, seed=run.train.seed)


def save_checkpoint(path: str | Path, run: RunConfig, model: HMERModel, state: AdamState | None = None,
                    meta: dict | None = None) -> None:
    tensors = {f"param/{n}": p.data for n, p in model.named_parameters()}
    if state is not None:
        for n in sorted(state.m):
            tensors[f"adam.m/{n}"] = state.m[n]
            tensors[f"adam.v/{n}"] = state.v[n]
    info = dict(meta or {})
    if state is not None:
        info["adam_step"] = state.step
    ckpt_io.save(ckpt_io.Checkpoint(tensors, config_io.dumps(run), model.vocab.to_text(), info), path)


def load_checkpoint(path: str | Path) -> tuple[HMERModel, RunConfig, AdamState, dict]:
    ck = ckpt_io.load(path)
    run = config_io.apply(RunConfig(), config_io.parse(ck.config_text))
    vocab = Vocab.from_text(ck.vocab_text, str(path))
    model = build_model(run, vocab)
    model.load_state_dict({k[len("param/"):]: v for k, v in ck.tensors.items() if k.startswith("param/")})
    state = AdamState(int(ck.meta.get("adam_step", 0)))
    for k, v in ck.tensors.items():
        if k.startswith("adam.m/"):
            state.m[k[len("adam.m/"):]] = v.copy()
        elif k.startswith("adam.v/"):
            state.v[k[len("adam.v/"):]] = v.copy()
    return model, run, state, ck.meta


# --- fit ------------------------------------------------------------------------

@dataclass
class FitResult:
    model: HMERModel
    steps: int
    best_exprate: float
    final_report: MetricsReport | None
    log_path: Path
    best_path: Path
    last_path: Path
    history: list[dict]


def batch_indices(step: int, n: int, batch_size: int, seed: int) -> np.ndarray:
    """Samples for ``step``: a fresh permutation per epoch, seeded by (seed, epoch)."""
    per_epoch = -(-n // batch_size)
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return perm[k * batch_size : (k + 1) * batch_size]


def _augment(samples: list[ExprSample], step: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, 1, step])
    factors = rng.uniform(*SCALE_RANGE, size=len(samples))
    return [rescale_content(s.image, float(f)) for s, f in zip(samples, factors)]


def _read_log(path: Path, before: int) -> list[dict]:
    if not path.exists():
        return []
    rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    return [r for r in rows if r["step"] < before]


def fit(run: RunConfig, train: Sequence[ExprSample], val: Sequence[ExprSample] | None = None,
        vocab: Vocab | None = None, resume: str | Path | None = None,
        stop_after: int | None = None) -> FitResult:
    """Train ``run`` on ``train``; keep the best-validation and the latest checkpoint under run.out_dir.

    ``stop_after`` ends the loop early at that step (for resume tests) without
    changing the schedule, which is always laid out over ``max_steps``.
    """
    cfg = run.train
    if not train:
        raise ConfigError("training set is empty")
    val = list(train) if val is None else list(val)
    if not val:
        raise ConfigError("validation set is empty")
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path, best_path, last_path = out / "train_log.jsonl", out / "best.ckpt", out / "last.ckpt"

    if resume is not None:
        model, saved_run, state, meta = load_checkpoint(resume)
        if config_io.dumps(saved_run.train) != config_io.dumps(cfg) or \
                config_io.dumps(saved_run.model) != config_io.dumps(run.model):
            raise ConfigError("checkpoint was written with a different model/train config")
        start = int(meta["step"])
        best = float(meta.get("best_exprate", -1.0))
        history = _read_log(log_path, start)
    else:
        vocab = vocab or corpus_vocab(list(train) + list(val))
        model = build_model(run, vocab)
        state = AdamState()
        start, best, history = 0, -1.0, []
    vocab = model.vocab
    params = dict(model.named_parameters())
    end = cfg.max_steps if stop_after is None else min(cfg.max_steps, stop_after)
    report = None

    with open(log_path, "w") as fh:
        for row in history:
            fh.write(json.dumps(row) + "\n")
        step = start
        while step < end:
            idx = batch_indices(step, len(train), cfg.batch_size, cfg.seed)
            samples = [train[i] for i in idx]
            images = _augment(samples, step, cfg.seed) if cfg.scale_aug else None
            batch = collate(samples, vocab, images)
            model.zero_grad()
            losses = model.losses(batch)
            try:
                loss = total_loss(losses.rec, losses.pos, losses.counting, cfg.weights, cfg.flags, losses.ccad)
                loss.backward()
                lr = learning_rate(step, cfg)
                gnorm = optimizer_step(params, state, lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.clip_norm)
            except (NonFiniteLoss, NonFiniteGrad) as exc:
                raise type(exc)(f"step {step}: {exc}") from exc
            row = {"step": step, "l_rec": _value(losses.rec), "l_pos": _value(losses.pos),
                   "l_counting": None if losses.counting is None else _value(losses.counting),
                   "l_all": _value(loss), "lr": lr, "grad_norm": gnorm}
            if losses.ccad is not None:
                row["l_ccad"] = _value(losses.ccad)
            fh.write(json.dumps(row) + "\n")
            fh.flush()
            history.append(row)
            step += 1

            stop = False
            if step % cfg.eval_every == 0 or step == cfg.max_steps:
                report = evaluate_model(model, val, cfg.decode_max_len)
                log.info("step %d loss %.4f val %s", step, row["l_all"], report.summary())
                if report.exprate > best:
                    best = report.exprate
                    save_checkpoint(best_path, run, model, None, {"step": step, "best_exprate": best})
                stop = cfg.stop_exprate > 0 and report.exprate >= cfg.stop_exprate
            if step % cfg.checkpoint_every == 0 or step == end or stop:
                save_checkpoint(last_path, run, model, state, {"step": step, "best_exprate": best})
            if stop:
                break
    return FitResult(model, step, best, report, log_path, best_path, last_path, history)
