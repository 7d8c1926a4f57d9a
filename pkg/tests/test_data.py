import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmerkit.counting import count_vector
from hmerkit.data import (
    GRAMMAR_VERSION, ExprSample, corpus_vocab, grammar_vocab, ink_to_sample, load_manifest, overfit_set,
    parse_inkml, rasterize, read_inkml, read_pgm, render_synthetic, rescale_content, synth_corpus,
    synth_expression, write_manifest, write_pgm,
)
from hmerkit.errors import CorruptRecord, EmptyTraces, IoFailure, MalformedXml, MissingTruth
from hmerkit.font import glyph
from hmerkit.posforest import encode_position_labels, max_depth

INK = '<ink xmlns="http://www.w3.org/2003/InkML"><annotation type="truth">{truth}</annotation>{traces}</ink>'


def ink(truth="a", traces=('<trace id="0">0 0, 1 1</trace>',)):
    return INK.format(truth=truth, traces="".join(traces))


def test_parse_inkml_minimal():
    s = parse_inkml(ink())
    assert s.truth == "a" and len(s.traces) == 1
    assert s.traces[0].tolist() == [[0, 0], [1, 1]]


def test_parse_inkml_errors():
    with pytest.raises(EmptyTraces):
        parse_inkml(ink(traces=()))
    with pytest.raises(MissingTruth):
        parse_inkml('<ink><trace>0 0</trace></ink>')
    with pytest.raises(MalformedXml):
        parse_inkml("<ink><trace>0 0</ink>")


EXPECTED = {
    "fixture_sup": (3, "$x^{2}$", ["x", "^", "{", "2", "}"]),
    "fixture_frac": (4, r"$\frac{a}{b}$", [r"\frac", "{", "a", "}", "{", "b", "}"]),
    "fixture_sqrt": (6, r"$\sqrt{x+1}$", [r"\sqrt", "{", "x", "+", "1", "}"]),
}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_bundled_fixtures(fixtures_dir, name):
    import xml.etree.ElementTree as ET

    path = fixtures_dir / "inkml" / f"{name}.inkml"
    s = read_inkml(path)
    n_traces, truth, tokens = EXPECTED[name]
    # independent count: every element whose local name is "trace"
    scanned = sum(1 for el in ET.parse(path).iter() if el.tag.endswith("}trace") or el.tag == "trace")
    assert len(s.traces) == n_traces == scanned
    assert s.truth == truth
    sample = ink_to_sample(s)
    assert sample.tokens == tokens and sample.image.shape[0] == 64


def test_malformed_fixture(fixtures_dir):
    with pytest.raises(MalformedXml):
        read_inkml(fixtures_dir / "malformed" / "fixture_bad.inkml")


def test_rasterize_horizontal_segment_is_one_row():
    img = rasterize([np.array([[0.0, 5.0], [10.0, 5.0]])], target_height=9, thickness=1, margin=0)
    rows = np.flatnonzero(img.max(axis=1))
    assert len(rows) == 1 and img[rows[0]].all()


def test_rasterize_diagonal_is_a_band():
    img = rasterize([np.array([[0.0, 0.0], [20.0, 20.0]])], target_height=21, thickness=1, margin=0)
    assert img.shape == (21, 21)
    assert all(img[i, i] == 1 for i in range(21))
    assert img.sum() == 21


def test_rasterize_single_point():
    img = rasterize([np.array([[3.0, 3.0]])], target_height=16)
    assert img.sum() > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 50), st.floats(-100, 100), st.floats(-100, 100))
def test_rasterize_scale_and_translation_invariant(scale, dx, dy):
    rng = np.random.default_rng(0)
    traces = [rng.uniform(0, 10, size=(5, 2)) for _ in range(3)]
    base = rasterize(traces)
    moved = rasterize([t * scale + np.array([dx, dy]) for t in traces])
    assert base.shape == moved.shape
    assert np.count_nonzero(base) == pytest.approx(np.count_nonzero(moved), rel=0.02)


def test_synth_deterministic_and_depth_bounded():
    assert synth_expression(0, 0) == synth_expression(0, 0)
    flat = encode_position_labels(synth_expression(0, 0))
    assert set(flat.depths) == {0} and set(flat.relpos) == {"middle"}
    depths = [max_depth(synth_expression(s, 3)) for s in range(1000)]
    assert max(depths) <= 3 and 3 in depths
    assert GRAMMAR_VERSION == 1


def test_render_single_glyph():
    img = render_synthetic(["a"])
    ys, xs = np.nonzero(img)
    crop = img[ys.min(): ys.max() + 1, xs.min(): xs.max() + 1]
    g = glyph("a", 2)
    gy, gx = np.nonzero(g)
    assert np.array_equal(crop, g[gy.min(): gy.max() + 1, gx.min(): gx.max() + 1])


def _ink_rows(img, c0, c1):
    rows = np.flatnonzero(img[:, c0:c1].max(axis=1))
    return rows.mean()


def test_render_superscript_is_raised():
    img = render_synthetic(["x", "^", "{", "2", "}"])
    cols = np.flatnonzero(img.max(axis=0))
    x_w = glyph("x", 2).shape[1]
    x_center = _ink_rows(img, cols[0], cols[0] + x_w)
    two_center = _ink_rows(img, cols[0] + x_w + 1, cols[-1] + 1)
    assert two_center < x_center


def test_render_fraction_has_bar():
    img = render_synthetic([r"\frac", "{", "a", "}", "{", "b", "}"])
    ys, xs = np.nonzero(img)
    box = img[ys.min(): ys.max() + 1, xs.min(): xs.max() + 1]
    bars = [r for r in range(box.shape[0]) if box[r].all()]
    assert len(bars) == 1
    bar = bars[0]
    assert box[:bar].sum() > 0 and box[bar + 1:].sum() > 0


def test_images_in_unit_range():
    for s in overfit_set():
        assert s.image.dtype == np.float32 and s.image.shape[0] == 64
        assert s.image.min() >= 0 and s.image.max() <= 1


def test_rescale_content_keeps_height():
    img = overfit_set()[0].image
    for f in (0.7, 1.0, 1.4):
        out = rescale_content(img, f)
        assert out.shape[0] == img.shape[0] and out.max() == 1


def test_pgm_round_trip(tmp_path):
    img = (np.arange(12, dtype=np.float32).reshape(3, 4) / 11)
    write_pgm(tmp_path / "x.pgm", img)
    assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5")
    back = read_pgm(tmp_path / "x.pgm")
    assert np.allclose(back, np.round(img * 255) / 255)


def test_manifest_round_trip(tmp_path):
    samples = synth_corpus(3, 10, 2)
    write_manifest(samples, tmp_path / "m.jsonl")
    back = load_manifest(tmp_path / "m.jsonl")
    for a, b in zip(samples, back):
        assert (a.sample_id, a.tokens, a.labels, a.counts) == (b.sample_id, b.tokens, b.labels, b.counts)
        assert np.array_equal(a.image, b.image)


def test_manifest_truncated_line(tmp_path):
    write_manifest(synth_corpus(3, 4, 1), tmp_path / "m.jsonl")
    text = (tmp_path / "m.jsonl").read_text()
    (tmp_path / "m.jsonl").write_text(text[: len(text) - 20])
    with pytest.raises(CorruptRecord, match=":4:"):
        load_manifest(tmp_path / "m.jsonl")
    with pytest.raises(IoFailure):
        load_manifest(tmp_path / "missing.jsonl")


def test_overfit_manifest_counts_consistent(tmp_path):
    samples = overfit_set()
    write_manifest(samples, tmp_path / "m.jsonl")
    v = grammar_vocab()
    for line in (tmp_path / "m.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert sum(rec["counts"].values()) == len(rec["tokens"]) == count_vector(rec["tokens"], v).sum()
    assert set(corpus_vocab(samples).classes) <= set(v.classes)
