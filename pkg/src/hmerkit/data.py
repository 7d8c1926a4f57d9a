"""Samples, synthetic corpus generation, rendering, InkML ingestion and manifests."""
from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage

from . import font
from .counting import count_vector, counts_to_dict
from .errors import (
    CorruptRecord,
    DepthExceeded,
    EmptyTraces,
    IoFailure,
    MalformedXml,
    MissingTruth,
)
from .latex import Vocab, build_vocab, tokenize
from .posforest import D_MAX, ForestNode, PositionLabels, encode_position_labels, parse_forest

IMAGE_HEIGHT = 64


@dataclass
class ExprSample:
    """An image with its token sequence and the labels derived from it."""

    sample_id: str
    image: np.ndarray  # (H, W) float32 in [0, 1], ink high
    tokens: list[str]
    labels: PositionLabels
    counts: dict[str, int]

    def count_vector(self, vocab: Vocab) -> np.ndarray:
        return count_vector(self.tokens, vocab)


def make_sample(sample_id: str, tokens: Sequence[str], image: np.ndarray) -> ExprSample:
    tokens = list(tokens)
    labels = encode_position_labels(tokens)
    counts: dict[str, int] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    return ExprSample(sample_id, np.asarray(image, dtype=np.float32), tokens, labels, counts)


# ---------------------------------------------------------------------------
# synthetic grammar

GRAMMAR_VERSION = 1
ATOMS = tuple("0123456789") + ("a", "b", "c", "n", "x", "y", "z") + (
    "\\alpha", "\\beta", "\\pi", "\\theta",
)
BINARY_OPS = ("+", "-", "=", "\\times")
STRUCTURE_TOKENS = ("^", "_", "{", "}", "\\frac", "\\sqrt")
PRODUCTIONS = ("atom", "binop", "supsub", "frac", "sqrt")
WEIGHTS = np.array([0.60, 0.15, 0.10, 0.10, 0.05])
MAX_TOKENS = 40


def grammar_terminals() -> tuple[str, ...]:
    return ATOMS + BINARY_OPS + STRUCTURE_TOKENS


def grammar_vocab() -> Vocab:
    return build_vocab([grammar_terminals()])


class _Generator:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.n = 0

    def pick(self, options):
        return options[int(self.rng.integers(len(options)))]

    def production(self, depth_left: int) -> str:
        w = WEIGHTS.copy()
        if depth_left <= 0:
            w[2:] = 0.0
        if self.n > MAX_TOKENS - 8:
            w[1:] = 0.0
        w /= w.sum()
        return PRODUCTIONS[int(self.rng.choice(len(PRODUCTIONS), p=w))]

    def slot(self, d: int) -> list[str]:
        kind = self.production(d)
        if kind == "atom":
            out = [self.pick(ATOMS)]
        elif kind == "binop":
            left = self.slot(d)
            self.n += len(left) + 1
            out = left + [self.pick(BINARY_OPS)] + self.slot(d)
            self.n -= len(left) + 1
        elif kind == "supsub":
            base = [self.pick(ATOMS)]
            r = self.rng.random()
            if r < 0.5:
                out = base + ["^", "{"] + self.slot(d - 1) + ["}"]
            elif r < 0.8:
                out = base + ["_", "{"] + self.slot(d - 1) + ["}"]
            else:
                out = base + ["_", "{"] + self.slot(d - 1) + ["}", "^", "{"] + self.slot(d - 1) + ["}"]
        elif kind == "frac":
            out = ["\\frac", "{"] + self.slot(d - 1) + ["}", "{"] + self.slot(d - 1) + ["}"]
        else:
            out = ["\\sqrt", "{"] + self.slot(d - 1) + ["}"]
        return out


def synth_expression(seed: int, max_depth: int) -> list[str]:
    """Deterministic random expression from the built-in grammar.

    One to three top-level terms joined by binary operators; each term draws
    atom / operator extension / script / fraction / radical with weights
    60/15/10/10/5, structural productions disabled once ``max_depth`` is used up.
    """
    if max_depth > D_MAX:
        raise DepthExceeded(f"max_depth {max_depth} exceeds D_max={D_MAX}")
    gen = _Generator(seed)
    tokens = gen.slot(max_depth)
    for _ in range(int(gen.rng.integers(0, 3))):
        if len(tokens) > MAX_TOKENS - 8:
            break
        gen.n = len(tokens) + 1
        tokens += [gen.pick(BINARY_OPS)] + gen.slot(max_depth)
    return tokens


# ---------------------------------------------------------------------------
# rendering


@dataclass
class _Box:
    img: np.ndarray
    axis: int  # row of the math axis

    @property
    def h(self) -> int:
        return self.img.shape[0]

    @property
    def w(self) -> int:
        return self.img.shape[1]


def _compose(parts: list[tuple[_Box, int, int]]) -> _Box:
    """Place boxes at (row offset of axis relative to 0, column) on one canvas."""
    top = min(dy - b.axis for b, dy, _ in parts)
    bottom = max(dy - b.axis + b.h for b, dy, _ in parts)
    right = max(x + b.w for b, _, x in parts)
    canvas = np.zeros((bottom - top, right), dtype=np.float32)
    for b, dy, x in parts:
        r = dy - b.axis - top
        canvas[r : r + b.h, x : x + b.w] = np.maximum(canvas[r : r + b.h, x : x + b.w], b.img)
    return _Box(canvas, -top)


def _hcat(boxes: list[_Box], gap: int) -> _Box:
    if not boxes:
        return _Box(np.zeros((1, 1), dtype=np.float32), 0)
    parts, x = [], 0
    for b in boxes:
        parts.append((b, 0, x))
        x += b.w + gap
    return _compose(parts)


def _scale(depth: int) -> int:
    return 2 if depth == 0 else 1


def _render_nodes(tokens, nodes: list[ForestNode], depth: int) -> _Box:
    return _hcat([_render_node(tokens, n, depth) for n in nodes], gap=_scale(depth))


def _render_node(tokens, node: ForestNode, depth: int) -> _Box:
    if depth > D_MAX:
        raise DepthExceeded(f"render depth {depth} exceeds D_max={D_MAX}")
    s = _scale(depth)
    if node.kind == "atom":
        tok = tokens[node.span[0]]
        if tok not in font.GLYPHS:
            raise KeyError(f"no glyph for token {tok!r}")
        img = font.glyph(tok, s)
        return _Box(img, img.shape[0] // 2)
    if node.kind == "group":
        return _render_nodes(tokens, node.main, depth)
    if node.kind == "sup_sub":
        base = _render_node(tokens, node.main[0], depth)
        parts = [(base, 0, 0)]
        x = base.w + 1
        if node.upper_span is not None:
            sup = _render_nodes(tokens, node.upper, depth + 1)
            # bottom of superscript sits on the base's axis
            parts.append((sup, sup.axis - sup.h, x))
        if node.lower_span is not None:
            sub = _render_nodes(tokens, node.lower, depth + 1)
            parts.append((sub, sub.axis + 1, x))
        return _compose(parts)
    if node.kind == "fraction":
        num = _render_nodes(tokens, node.upper, depth + 1)
        den = _render_nodes(tokens, node.lower, depth + 1)
        width = max(num.w, den.w) + 2
        bar = _Box(np.ones((1, width), dtype=np.float32), 0)
        parts = [
            (bar, 0, 0),
            (num, -(num.h - num.axis) - 1, (width - num.w) // 2),
            (den, den.axis + 2, (width - den.w) // 2),
        ]
        return _compose(parts)
    if node.kind == "sqrt":
        rad = _render_nodes(tokens, node.main, depth + 1)
        h = rad.h + 2
        w = rad.w + 5
        img = np.zeros((h, w), dtype=np.float32)
        img[2:, 4 : 4 + rad.w] = rad.img
        img[0, 3:] = 1.0  # overline
        for r in range(h):  # long stroke, column 1 at the bottom to 3 at the top
            img[r, 1 + 2 * (h - 1 - r) // max(1, h - 1)] = 1.0
        img[h - 3 : h - 1, 0] = 1.0
        box = _Box(img, rad.axis + 2)
        if node.upper_span is not None:
            idx = _render_nodes(tokens, node.upper, depth + 1)
            return _compose([(idx, idx.axis - idx.h - (box.axis - 2), 0), (box, 0, max(0, idx.w - 2))])
        return box
    raise ValueError(node.kind)  # pragma: no cover


def render_synthetic(tokens: Sequence[str], height: int = IMAGE_HEIGHT, margin: int = 4) -> np.ndarray:
    """Typeset a parsed token sequence with the bitmap font into a (height, W) image."""
    tokens = list(tokens)
    box = _render_nodes(tokens, parse_forest(tokens), 0)
    img = box.img
    if img.shape[0] > height - 2:
        factor = (height - 2) / img.shape[0]
        img = _resize_nearest(img, height - 2, max(1, int(round(img.shape[1] * factor))))
        axis = int(round(box.axis * factor))
    else:
        axis = box.axis
    out_w = max(img.shape[1] + 2 * margin, 16)
    out = np.zeros((height, out_w), dtype=np.float32)
    top = min(max(height // 2 - axis, 0), height - img.shape[0])
    out[top : top + img.shape[0], margin : margin + img.shape[1]] = img
    return out


def _resize_nearest(img: np.ndarray, h: int, w: int) -> np.ndarray:
    rows = np.minimum((np.arange(h) + 0.5) * img.shape[0] / h, img.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(w) + 0.5) * img.shape[1] / w, img.shape[1] - 1).astype(int)
    return img[rows][:, cols]


def rescale_content(img: np.ndarray, factor: float, height: int | None = None) -> np.ndarray:
    """Rescale the inked region by ``factor`` and re-pad to the original height."""
    height = img.shape[0] if height is None else height
    rows = np.flatnonzero(img.max(axis=1) > 0)
    cols = np.flatnonzero(img.max(axis=0) > 0)
    if rows.size == 0:
        return img.copy()
    crop = img[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    factor = min(factor, (height - 2) / crop.shape[0])
    h = max(1, int(round(crop.shape[0] * factor)))
    w = max(1, int(round(crop.shape[1] * factor)))
    crop = _resize_nearest(crop, h, w)
    margin = 4
    out = np.zeros((height, max(w + 2 * margin, 16)), dtype=np.float32)
    top = (height - h) // 2
    out[top : top + h, margin : margin + w] = crop
    return out


def synth_corpus(seed: int, n: int, max_depth: int) -> list[ExprSample]:
    """``n`` rendered samples; sample ``i`` is generated from seed ``seed * 1_000_003 + i``."""
    samples = []
    for i in range(n):
        toks = synth_expression(seed * 1_000_003 + i, max_depth)
        samples.append(make_sample(f"synth-{seed}-{i:06d}", toks, render_synthetic(toks)))
    return samples


def overfit_set() -> list[ExprSample]:
    """The fixed 64-sample set used for overfit experiments."""
    return synth_corpus(seed=0, n=64, max_depth=2)


# ---------------------------------------------------------------------------
# InkML


@dataclass
class InkSample:
    traces: list[np.ndarray]  # each (n_points, 2)
    truth: str
    sample_id: str = ""
    extra: dict = field(default_factory=dict)


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_inkml(document: str, sample_id: str = "") -> InkSample:
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise MalformedXml(f"{sample_id or 'document'}: {exc}") from None
    truth = None
    for child in root:
        if _local(child.tag) == "annotation" and child.get("type") == "truth":
            truth = (child.text or "").strip()
            break
    if truth is None:
        raise MissingTruth(f"{sample_id or 'document'}: no top-level truth annotation")
    traces = []
    for el in root.iter():
        if _local(el.tag) != "trace":
            continue
        pts = []
        for chunk in (el.text or "").split(","):
            vals = chunk.split()
            if len(vals) < 2:
                continue
            try:
                pts.append((float(vals[0]), float(vals[1])))
            except ValueError:
                raise MalformedXml(f"bad coordinate {chunk.strip()!r} in trace {el.get('id')}") from None
        if not pts:
            raise EmptyTraces(f"trace {el.get('id')} has no points")
        traces.append(np.array(pts, dtype=np.float64))
    if not traces:
        raise EmptyTraces(f"{sample_id or 'document'}: no trace elements")
    return InkSample(traces, truth, sample_id)


def read_inkml(path: str | Path) -> InkSample:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return parse_inkml(text, path.stem)


def truth_tokens(truth: str) -> list[str]:
    """Tokens of a truth annotation, dropping the ``$`` math delimiters CROHME uses."""
    text = truth.strip()
    if text.startswith("$") and text.endswith("$") and len(text) >= 2:
        text = text.strip("$")
    return tokenize(text)


def rasterize(traces: Sequence[np.ndarray], target_height: int = IMAGE_HEIGHT,
              thickness: int = 2, margin: int = 2) -> np.ndarray:
    """Draw polylines into a (target_height, W) binary image, aspect ratio preserved."""
    if not traces or any(len(t) == 0 for t in traces):
        raise EmptyTraces("rasterize needs at least one trace with points")
    pts = np.concatenate([np.asarray(t, dtype=np.float64)[:, :2] for t in traces])
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    usable = target_height - 1 - 2 * margin
    if span[1] > 0:
        scale = usable / span[1]
        y_off = float(margin)
    elif span[0] > 0:
        scale = usable / span[0]
        y_off = (target_height - 1) / 2
    else:
        scale = 1.0
        y_off = (target_height - 1) / 2
    width = int(math.ceil(span[0] * scale)) + 1 + 2 * margin
    img = np.zeros((target_height, width), dtype=np.float32)
    offs = np.arange(-(thickness // 2), thickness - thickness // 2)

    def stamp(x: np.ndarray, y: np.ndarray) -> None:
        xi = np.rint(x).astype(int)
        yi = np.rint(y).astype(int)
        for dy in offs:
            for dx in offs:
                r = np.clip(yi + dy, 0, target_height - 1)
                c = np.clip(xi + dx, 0, width - 1)
                img[r, c] = 1.0

    for t in traces:
        p = (np.asarray(t, dtype=np.float64)[:, :2] - lo) * scale
        xs = p[:, 0] + margin
        ys = p[:, 1] + y_off
        if len(p) == 1:
            stamp(xs, ys)
            continue
        for i in range(len(p) - 1):
            length = math.hypot(xs[i + 1] - xs[i], ys[i + 1] - ys[i])
            k = max(2, int(math.ceil(length * 2)) + 1)
            u = np.linspace(0.0, 1.0, k)
            stamp(xs[i] + u * (xs[i + 1] - xs[i]), ys[i] + u * (ys[i + 1] - ys[i]))
    return img


def ink_to_sample(ink: InkSample, target_height: int = IMAGE_HEIGHT) -> ExprSample:
    return make_sample(ink.sample_id, truth_tokens(ink.truth), rasterize(ink.traces, target_height))


# ---------------------------------------------------------------------------
# images and manifests


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    try:
        PILImage.fromarray(arr, mode="L").save(path, format="PPM")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_pgm(path: str | Path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    return arr / 255.0


_FIELDS = ("id", "image_path", "tokens", "depths", "relpos", "counts")


def write_manifest(samples: Sequence[ExprSample], path: str | Path, image_dir: str = "images") -> None:
    """One JSON record per line; images go to ``<manifest dir>/<image_dir>/<id>.pgm``."""
    if not samples:
        raise ValueError("write_manifest needs at least one sample")
    path = Path(path)
    img_root = path.parent / image_dir
    try:
        img_root.mkdir(parents=True, exist_ok=True)
        lines = []
        for s in samples:
            rel = f"{image_dir}/{s.sample_id}.pgm"
            write_pgm(path.parent / rel, s.image)
            rec = {
                "id": s.sample_id,
                "image_path": rel,
                "tokens": s.tokens,
                "depths": s.labels.depths,
                "relpos": s.labels.relpos,
                "counts": dict(sorted(s.counts.items())),
            }
            lines.append(json.dumps(rec, ensure_ascii=False))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_manifest(path: str | Path, load_images: bool = True) -> list[ExprSample]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    samples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptRecord(f"{path}:{lineno}: {exc.msg}") from None
        missing = [f for f in _FIELDS if f not in rec]
        if missing:
            raise CorruptRecord(f"{path}:{lineno}: missing fields {missing}")
        if not (len(rec["tokens"]) == len(rec["depths"]) == len(rec["relpos"])):
            raise CorruptRecord(f"{path}:{lineno}: tokens/depths/relpos lengths differ")
        image = read_pgm(path.parent / rec["image_path"]) if load_images else np.zeros((0, 0), np.float32)
        samples.append(
            ExprSample(
                rec["id"],
                image,
                list(rec["tokens"]),
                PositionLabels(list(rec["depths"]), list(rec["relpos"])),
                {k: int(v) for k, v in rec["counts"].items()},
            )
        )
    if not samples:
        raise CorruptRecord(f"{path}: no records")
    return samples


def corpus_vocab(samples: Iterable[ExprSample]) -> Vocab:
    return build_vocab(s.tokens for s in samples)
