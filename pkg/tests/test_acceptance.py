"""Acceptance criteria, one test each.

Every test records a PASS/FAIL/INFO line; conftest prints them at the end of the
run. ``python3 tests/test_acceptance.py`` runs the same checks without pytest.
Criterion 6 trains the full desk-scale model and takes several minutes.
"""
from __future__ import annotations

import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import edit_distance_columns, recursive_labels, tally  # noqa: E402
from hmerkit import checkpoint as ckpt_io  # noqa: E402
from hmerkit import tensor as T  # noqa: E402
from hmerkit.cli import main as cli_main  # noqa: E402
from hmerkit.cnn_viewer import CoverageDecoder  # noqa: E402
from hmerkit.counting import count_vector, smooth_l1  # noqa: E402
from hmerkit.data import (  # noqa: E402
    grammar_terminals, grammar_vocab, load_manifest, overfit_set, read_inkml, synth_corpus, synth_expression,
    write_manifest,
)
from hmerkit.errors import MalformedXml  # noqa: E402
from hmerkit.gradsuite import run_suite  # noqa: E402
from hmerkit.latex import Vocab  # noqa: E402
from hmerkit.metrics import edit_distance, evaluate  # noqa: E402
from hmerkit.posforest import D_MAX, encode_position_labels  # noqa: E402
from hmerkit.tensor import Tensor  # noqa: E402
from hmerkit.train import LossWeights, RunConfig, TrainConfig, fit, predict_tokens, total_loss  # noqa: E402
from hmerkit.transformer import (  # noqa: E402
    TransformerConfig, TransformerViewer, implicit_attention_refine, loss_pos, loss_rec,
)

FIXTURES = Path(__file__).parent / "fixtures"
RESULTS: list[str] = []


def record(n: int, ok: bool | None, detail: str) -> None:
    status = "INFO" if ok is None else ("PASS" if ok else "FAIL")
    RESULTS.append(f"[{status}] criterion {n:>2}: {detail}")


def check(n: int, ok: bool, detail: str) -> None:
    record(n, ok, detail)
    assert ok, detail


# 1 ---------------------------------------------------------------------------------

def test_c01_label_oracle():
    t0 = time.perf_counter()
    mismatches = 0
    for seed in range(1000):
        toks = synth_expression(seed, 3)
        lab = encode_position_labels(toks)
        mismatches += (lab.depths, lab.relpos) != recursive_labels(toks)
    elapsed = time.perf_counter() - t0
    check(1, mismatches == 0 and elapsed < 5,
          f"position labels vs brute-force labeler: {1000 - mismatches}/1000 equal in {elapsed:.2f}s")


# 2 ---------------------------------------------------------------------------------

def test_c02_counting():
    rng = np.random.default_rng(2)
    vocab = grammar_vocab()
    terms = list(grammar_terminals())
    bad = 0
    for _ in range(500):
        toks = [terms[i] for i in rng.integers(0, len(terms), size=int(rng.integers(1, 40)))]
        bad += count_vector(toks, vocab).tolist() != tally(toks, vocab.classes)
    check(2, bad == 0, f"count_vector vs Counter tally: {500 - bad}/500 equal")


# 3 ---------------------------------------------------------------------------------

def test_c03_loss_identities():
    k = 40
    with T.precision(np.float64):
        rec = loss_rec(Tensor(np.zeros((3, 7, k))), np.arange(21).reshape(3, 7) % k).item()
        pos = loss_pos(Tensor(np.zeros((3, 7, D_MAX + 1))), Tensor(np.zeros((3, 7, 3))),
                       np.zeros((3, 7), dtype=int), np.zeros((3, 7), dtype=int)).item()
    sl = [float(smooth_l1(np.array([r]), np.array([0.0]))) for r in (0.0, 0.5, 2.0)]
    tot = total_loss(1.0, 2.0, 3.0, LossWeights(1.0, 0.5, 0.1))
    errs = (abs(rec - math.log(k)), abs(pos - math.log(D_MAX + 1) - math.log(3)), abs(tot - 2.3))
    ok = errs[0] < 1e-6 and errs[1] < 1e-6 and sl == [0.0, 0.125, 1.5] and errs[2] < 1e-9
    check(3, ok, f"rec-lnK {errs[0]:.1e}, pos-(ln9+ln3) {errs[1]:.1e}, smooth_l1 {sl}, total {tot!r}")


# 4 ---------------------------------------------------------------------------------

def test_c04_gradient_checks():
    t0 = time.perf_counter()
    results = run_suite(seed=0)
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    worst_p = max(r.error for r in results if r.kind == "primitive")
    worst_c = max(r.error for r in results if r.kind == "composite")
    check(4, not failed and elapsed < 120,
          f"{len(results)} finite-difference checks, worst primitive {worst_p:.1e}, worst composite "
          f"{worst_c:.1e}, failed {failed or 'none'}, {elapsed:.0f}s")


# 5 ---------------------------------------------------------------------------------

def test_c05_normalisation():
    rng = np.random.default_rng(5)
    worst_row = 0.0
    worst_cov = 0.0
    causal_ok = 0
    with T.precision(np.float64), T.no_grad():
        for case in range(20):
            cfg = TransformerConfig(model_dim=8, heads=2, ffn_dim=16, layers=1 + case % 3)
            viewer = TransformerViewer(cfg, 4, 13, np.random.default_rng(case))
            length = int(rng.integers(2, 9))
            mem = Tensor(rng.normal(size=(2, 6, 8)))
            valid = np.ones((2, 6), dtype=bool)
            valid[1, 4:] = False
            ids = rng.integers(0, 13, size=(2, length))
            out = viewer.decode(mem, valid, ids)
            for logits in (out.symbol_logits, out.depth_logits, out.relpos_logits):
                worst_row = max(worst_row, np.abs(T.softmax(logits, axis=-1).data.sum(-1) - 1).max())
            for attn in out.cross_attention:
                worst_row = max(worst_row, np.abs(attn.sum(-1) - 1).max())
            t = int(rng.integers(1, length))
            changed = ids.copy()
            changed[:, t] = (changed[:, t] + 1) % 13
            again = viewer.decode(mem, valid, changed)
            causal_ok += all(np.array_equal(getattr(out, f).data[:, :t], getattr(again, f).data[:, :t])
                             for f in ("symbol_logits", "depth_logits", "relpos_logits"))
        raw = Tensor(rng.dirichlet(np.ones(6), size=(2, 3)))
        refined = implicit_attention_refine(raw, Tensor(rng.uniform(0, 2, size=(2, 3, 6))), Tensor(np.ones(3)))
        worst_row = max(worst_row, np.abs(refined.data.sum(-1) - 1).max())

        dec = CoverageDecoder(rng, 5, 7, 4, hidden=6, embed_dim=4, attn_dim=4)
        feats = Tensor(rng.normal(size=(2, 5, 3, 4)))
        state = dec.init_state(feats)
        for k in range(1, 13):
            _, attn, state = dec.step(state, feats, Tensor(rng.normal(size=(2, 4))), rng.integers(0, 7, size=2))
            worst_row = max(worst_row, np.abs(attn.data.sum(axis=(1, 2)) - 1).max())
            worst_cov = max(worst_cov, np.abs(state.coverage.data.sum(axis=(1, 2, 3)) - k).max())
    check(5, worst_row < 1e-6 and worst_cov < 1e-5 and causal_ok == 20,
          f"max row-sum error {worst_row:.1e}, max coverage error {worst_cov:.1e}, causality {causal_ok}/20")


# 6 ---------------------------------------------------------------------------------

def overfit_run(out_dir: Path, stop_after: int | None = None):
    run = RunConfig(train=TrainConfig(max_steps=2000, eval_every=100, stop_exprate=100.0),
                    out_dir=str(out_dir))
    return fit(run, overfit_set(), stop_after=stop_after)


@pytest.mark.slow
def test_c06_overfit(tmp_path):
    samples = overfit_set()
    t0 = time.perf_counter()
    res = overfit_run(tmp_path / "full")
    elapsed = time.perf_counter() - t0
    preds = predict_tokens(res.model, samples)
    exact = sum(p == s.tokens for p, s in zip(preds, samples))
    exprate = evaluate(preds, [s.tokens for s in samples]).exprate
    # same seed, fresh process state: the first 20 logged steps must repeat bit for bit
    replay = overfit_run(tmp_path / "replay", stop_after=20)
    deterministic = replay.history == res.history[:20]
    check(6, exprate >= 95 and exact >= 61 and res.steps <= 2000 and elapsed < 900 and deterministic,
          f"train ExpRate {exprate:.2f}, exact {exact}/64 after {res.steps} steps in {elapsed:.0f}s, "
          f"seed-deterministic {deterministic}")


# 7 ---------------------------------------------------------------------------------

def test_c07_ablation_direction():
    """Informational: reads the numbers written by scripts/ablation.py."""
    path = Path(os.environ.get("HMERKIT_ABLATION_RESULTS", Path(__file__).parents[1] / "runs/ablation/results.json"))
    if not path.exists():
        record(7, None, f"no ablation results at {path}; run scripts/ablation.py")
        return
    res = json.loads(path.read_text())
    mv, base = res["multiview"]["exprate"], res["baseline"]["exprate"]
    direction = "holds" if mv >= base else "does not hold"
    record(7, None, f"held-out ExpRate multiview {mv:.2f} vs lambda3=0 baseline {base:.2f}; direction {direction}")


# 8 ---------------------------------------------------------------------------------

def test_c08_metrics_oracle():
    rng = np.random.default_rng(8)
    alphabet = list("abcde")
    bad = 0
    pairs = []
    for _ in range(500):
        a = [alphabet[i] for i in rng.integers(0, 5, size=int(rng.integers(0, 12)))]
        b = [alphabet[i] for i in rng.integers(0, 5, size=int(rng.integers(0, 12)))]
        bad += edit_distance(a, b) != edit_distance_columns(a, b)
        pairs.append((a, b))
    chains = 0
    for k in range(50):
        chunk = pairs[k * 10:(k + 1) * 10]
        r = evaluate([p for p, _ in chunk], [t or ["x"] for _, t in chunk])
        chains += r.exprate <= r.le1 <= r.le2 <= r.le3 <= 100
    check(8, bad == 0 and chains == 50, f"edit_distance vs column DP {500 - bad}/500, monotone chain {chains}/50")


# 9 ---------------------------------------------------------------------------------

def test_c09_round_trips(tmp_path):
    samples = synth_corpus(9, 16, 2)
    write_manifest(samples, tmp_path / "m.jsonl")
    back = load_manifest(tmp_path / "m.jsonl")
    manifest_ok = all(
        (a.sample_id, a.tokens, a.labels, a.counts) == (b.sample_id, b.tokens, b.labels, b.counts)
        and np.array_equal(a.image, b.image) for a, b in zip(samples, back)) and len(back) == len(samples)

    vocab = grammar_vocab()
    vocab.save(tmp_path / "vocab.txt")
    vocab_ok = Vocab.load(tmp_path / "vocab.txt").entries == vocab.entries

    rng = np.random.default_rng(9)
    tensors = {"w": rng.normal(size=(3, 4)).astype(np.float32), "d": rng.normal(size=5),
               "i": rng.integers(-9, 9, size=(2, 2))}
    ck = ckpt_io.Checkpoint(tensors, "train.seed = 0\n", vocab.to_text(), {"step": 7})
    ckpt_io.save(ck, tmp_path / "c.ckpt")
    loaded = ckpt_io.load(tmp_path / "c.ckpt")
    ckpt_ok = (loaded.tensors.keys() == tensors.keys()
               and all(loaded.tensors[k].dtype == v.dtype and np.array_equal(loaded.tensors[k], v)
                       for k, v in tensors.items())
               and loaded.config_text == ck.config_text and loaded.vocab_text == ck.vocab_text
               and loaded.meta == ck.meta)

    dirs = [tmp_path / "s1", tmp_path / "s2"]
    for d in dirs:
        cli_main(["synth", "--seed", "3", "--n", "12", "--max-depth", "2", "--out", str(d)])
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
    synth_ok = bool(files) and all((dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files)
    check(9, manifest_ok and vocab_ok and ckpt_ok and synth_ok,
          f"manifest {manifest_ok}, vocab {vocab_ok}, checkpoint {ckpt_ok}, synth byte-identical {synth_ok}")


# 10 --------------------------------------------------------------------------------

def test_c10_inkml(tmp_path):
    expected = {"fixture_sup": (3, "$x^{2}$"), "fixture_frac": (4, r"$\frac{a}{b}$"),
                "fixture_sqrt": (6, r"$\sqrt{x+1}$")}
    got = {}
    for name in expected:
        s = read_inkml(FIXTURES / "inkml" / f"{name}.inkml")
        got[name] = (len(s.traces), s.truth)
    try:
        read_inkml(FIXTURES / "malformed" / "fixture_bad.inkml")
        raised = False
    except MalformedXml:
        raised = True
    code = cli_main(["ingest", str(FIXTURES / "malformed"), "--out", str(tmp_path / "bad")])
    check(10, got == expected and raised and code != 0,
          f"fixtures {sum(got[k] == expected[k] for k in expected)}/3 match, MalformedXml raised {raised}, "
          f"CLI exit code {code}")


if __name__ == "__main__":
    import tempfile

    for name, fn in list(globals().items()):
        if not name.startswith("test_c"):
            continue
        with tempfile.TemporaryDirectory() as tmp:
            try:
                fn(Path(tmp)) if fn.__code__.co_argcount else fn()
            except AssertionError:
                pass
    print("\n".join(RESULTS))
    sys.exit(any(line.startswith("[FAIL]") for line in RESULTS))
