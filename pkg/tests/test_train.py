import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hmerkit import checkpoint as ckpt_io
from hmerkit import config as config_io
from hmerkit import tensor as T
from hmerkit.data import corpus_vocab, synth_corpus
from hmerkit.errors import ConfigError, CorruptRecord, NonFiniteGrad, NonFiniteLoss
from hmerkit.gradsuite import tiny_model_config
from hmerkit.model import Flags, collate
from hmerkit.tensor import Tensor
from hmerkit.train import (
    AdamState, LossWeights, RunConfig, TrainConfig, build_model, fit, learning_rate,
    load_checkpoint, load_run_config, optimizer_step, predict_tokens, save_checkpoint, total_loss,
)

DATA = synth_corpus(4, 6, 1)
VOCAB = corpus_vocab(DATA)


def tiny_run(tmp_path, name="run", mode="multiview", **train_kw):
    kw = dict(flags=Flags.from_mode(mode), max_steps=6, batch_size=3, eval_every=100,
              checkpoint_every=3, decode_max_len=8)
    kw.update(train_kw)
    return RunConfig(model=tiny_model_config(), train=TrainConfig(**kw), out_dir=str(tmp_path / name))


# --- total_loss -------------------------------------------------------------------

def test_total_loss_examples():
    assert abs(total_loss(1.0, 2.0, 3.0, LossWeights(1, 0.5, 0.1)) - 2.3) < 1e-9
    assert total_loss(1.0, 2.0, 3.0, LossWeights(1, 0.5, 0.0)) == 1.0 + 0.5 * 2.0
    assert total_loss(1.0, 2.0, 3.0, flags=Flags.from_mode("baseline")) == 2.0
    assert total_loss(1.0, 2.0, None) == 2.0
    assert abs(total_loss(1.0, 2.0, 3.0, l_ccad=4.0, flags=Flags.from_mode("multiview_task2")) - 6.3) < 1e-9
    assert abs(total_loss(1.0, 2.0, 3.0, l_ccad=4.0, flags=Flags.from_mode("multiview")) - 2.3) < 1e-9


@given(st.lists(st.floats(0, 100), min_size=4, max_size=4), st.integers(0, 2), st.floats(0, 50))
def test_total_loss_is_linear_per_component(vals, which, delta):
    base = list(vals[:3])
    w = LossWeights(1.0, 0.5, 0.1)
    bumped = list(base)
    bumped[which] += delta
    weight = (w.lambda1, w.lambda2, w.lambda3)[which]
    assert total_loss(*bumped, w) - total_loss(*base, w) == pytest.approx(weight * delta, abs=1e-9)


def test_total_loss_rejects_non_finite():
    for bad in (math.nan, math.inf):
        with pytest.raises(NonFiniteLoss):
            total_loss(1.0, bad, 0.0)
    with pytest.raises(NonFiniteLoss):
        total_loss(Tensor(np.array(np.nan)), 1.0, 1.0)


def test_total_loss_on_tensors_backpropagates():
    a, b, c = (Tensor(np.array(v), requires_grad=True) for v in (1.0, 2.0, 3.0))
    total_loss(a, b, c).backward()
    assert (a.grad, b.grad, c.grad) == (1.0, 0.5, pytest.approx(0.1))


def test_loss_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda2=-1)
    with pytest.raises(ValueError):
        LossWeights(lambda3=math.inf)
    with pytest.raises(ValueError):
        Flags(task1_on=True, multi_view_on=False, task2_on=True)
    with pytest.raises(ValueError):
        Flags(task1_on=False, multi_view_on=True)


# --- optimizer --------------------------------------------------------------------

def test_zero_grads_leave_params_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    optimizer_step({"p": p}, AdamState(), lr=0.1)
    assert p.data.tolist() == [1.0, -2.0]
    q = Tensor(np.array([3.0]), requires_grad=True)
    optimizer_step({"q": q}, AdamState(), lr=0.1)  # grad None: skipped
    assert q.data.tolist() == [3.0]


def test_one_step_descends():
    with T.precision(np.float64):
        w = Tensor(np.array([1.0]), requires_grad=True)
        (w * w).sum().backward()
        optimizer_step({"w": w}, AdamState(), lr=0.1)
    assert w.data[0] ** 2 < 1.0


def test_quadratic_converges():
    rng = np.random.default_rng(0)
    a = np.diag([1.0, 3.0, 10.0])
    target = rng.normal(size=3)
    cfg = TrainConfig(lr=0.1, max_steps=200, warmup_frac=0.05, clip_norm=1.0)
    state = AdamState()
    with T.precision(np.float64):
        w = Tensor(np.zeros(3), requires_grad=True)
        for step in range(200):
            w.grad = None
            d = w - Tensor(target)
            r = T.matmul(T.reshape(d, (1, 3)), Tensor(a))
            loss = (T.reshape(r, (3,)) * d).sum() * 0.5
            loss.backward()
            optimizer_step({"w": w}, state, learning_rate(step, cfg), clip_norm=cfg.clip_norm)
        d = w.data - target
    assert 0.5 * d @ a @ d < 1e-4


def test_clipping_and_non_finite_grad():
    p = Tensor(np.array([0.0]), requires_grad=True)
    p.grad = np.array([1e6])
    norm = optimizer_step({"p": p}, AdamState(), lr=0.1, clip_norm=1.0)
    assert norm == 1e6 and p.data[0] == pytest.approx(-0.1, rel=1e-6)
    p.grad = np.array([np.nan])
    with pytest.raises(NonFiniteGrad):
        optimizer_step({"p": p}, AdamState(), lr=0.1)


def test_learning_rate_schedule():
    cfg = TrainConfig(lr=1.0, max_steps=100, warmup_frac=0.05)
    lrs = [learning_rate(s, cfg) for s in range(100)]
    assert lrs[0] == pytest.approx(0.2) and lrs[4] == pytest.approx(1.0)
    assert all(x >= y for x, y in zip(lrs[4:], lrs[5:]))
    assert learning_rate(100, cfg) == pytest.approx(0.0, abs=1e-12)


# --- fit ----------------------------------------------------------------------------

def params_of(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


def test_fit_log_replay_and_outputs(tmp_path):
    run = tiny_run(tmp_path)
    res = fit(run, DATA)
    rows = [json.loads(l) for l in res.log_path.read_text().splitlines()]
    assert [r["step"] for r in rows] == list(range(6))
    for r in rows:
        assert set(r) >= {"step", "l_rec", "l_pos", "l_counting", "l_all"}
        assert abs(r["l_rec"] + 0.5 * r["l_pos"] + 0.1 * r["l_counting"] - r["l_all"]) < 1e-6
    assert res.best_path.exists() and res.last_path.exists()
    assert res.final_report is not None and res.final_report.n_samples == len(DATA)


def test_fit_is_seed_deterministic(tmp_path):
    a = fit(tiny_run(tmp_path, "a", max_steps=11), DATA)
    b = fit(tiny_run(tmp_path, "b", max_steps=11), DATA)
    for step in (0, 10):
        assert a.history[step] == b.history[step]
    c = fit(tiny_run(tmp_path, "c", max_steps=11, seed=1), DATA)
    assert c.history[0]["l_all"] != a.history[0]["l_all"]


def test_resume_matches_uninterrupted_run(tmp_path):
    full = fit(tiny_run(tmp_path, "full"), DATA)
    run = tiny_run(tmp_path, "split")
    first = fit(run, DATA, stop_after=3)
    assert first.steps == 3
    resumed = fit(run, DATA, resume=first.last_path)
    assert resumed.steps == 6
    a, b = params_of(full.model), params_of(resumed.model)
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert resumed.history == full.history


def test_resume_rejects_different_config(tmp_path):
    run = tiny_run(tmp_path)
    first = fit(run, DATA, stop_after=2)
    other = tiny_run(tmp_path, lr=1e-3)
    with pytest.raises(ConfigError):
        fit(other, DATA, resume=first.last_path)


def test_zero_counting_weight_freezes_counting_heads(tmp_path):
    run = tiny_run(tmp_path, max_steps=1, weights=LossWeights(1.0, 0.5, 0.0))
    model = build_model(run, VOCAB)
    before = params_of(model)
    res = fit(run, DATA, vocab=VOCAB)
    after = params_of(res.model)
    mscm = [k for k in before if k.startswith("mscm.")]
    assert mscm
    assert all(np.array_equal(before[k], after[k]) for k in mscm)
    assert not np.array_equal(before["backbone.stem.weight"], after["backbone.stem.weight"])


def test_scale_augmentation_is_seeded(tmp_path):
    a = fit(tiny_run(tmp_path, "a", max_steps=2, scale_aug=True), DATA)
    b = fit(tiny_run(tmp_path, "b", max_steps=2, scale_aug=True), DATA)
    plain = fit(tiny_run(tmp_path, "c", max_steps=2), DATA)
    assert a.history == b.history
    assert a.history[0]["l_all"] != plain.history[0]["l_all"]


@pytest.mark.parametrize("mode", ["baseline", "task1", "multiview_task2"])
def test_every_mode_trains(tmp_path, mode):
    res = fit(tiny_run(tmp_path, mode=mode, max_steps=2), DATA)
    row = res.history[-1]
    assert math.isfinite(row["l_all"])
    assert (row["l_counting"] is None) == (mode == "baseline")
    assert ("l_ccad" in row) == (mode == "multiview_task2")


def test_empty_training_set(tmp_path):
    with pytest.raises(ConfigError):
        fit(tiny_run(tmp_path), [])


# --- checkpoints and config -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    run = tiny_run(tmp_path)
    model = build_model(run, VOCAB)
    state = AdamState(3, {"backbone.stem.bias": np.arange(6.0)}, {"backbone.stem.bias": np.ones(6)})
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, run, model, state, {"step": 3})
    loaded, run2, state2, meta = load_checkpoint(path)
    assert config_io.dumps(run2) == config_io.dumps(run)
    assert loaded.vocab.entries == VOCAB.entries
    a, b = params_of(model), params_of(loaded)
    assert all(np.array_equal(a[k], b[k]) and a[k].dtype == b[k].dtype for k in a)
    assert state2.step == 3 and np.array_equal(state2.m["backbone.stem.bias"], np.arange(6.0))
    assert meta["step"] == 3
    assert predict_tokens(model, DATA, max_len=5) == predict_tokens(loaded, DATA, max_len=5)


def test_checkpoint_corruption_detected(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1, -2], dtype=np.int64)}
    path = tmp_path / "x.ckpt"
    ckpt_io.save(ckpt_io.Checkpoint(tensors, "x = 1\n", "a\nb\n", {"k": 1}), path)
    back = ckpt_io.load(path)
    assert all(np.array_equal(back.tensors[k], tensors[k]) for k in tensors)
    raw = path.read_bytes()
    for broken in (raw[:-3], raw + b"\0", b"nope" + raw[4:], raw.replace(b"x = 1", b"x = 2")):
        path.write_bytes(broken)
        with pytest.raises(CorruptRecord):
            ckpt_io.load(path)


def test_config_file_round_trip(tmp_path):
    run = RunConfig()
    text = config_io.dumps(run)
    assert config_io.apply(RunConfig(), config_io.parse(text)) == run
    path = tmp_path / "c.cfg"
    path.write_text("# comment\ntrain.weights.lambda3 = 0.0\ntrain.flags.multi_view_on = False\n"
                    "train.flags.task1_on = False\nmodel.transformer.layers = 2\n")
    loaded = load_run_config(path, {"train.seed": 7})
    assert loaded.train.weights.lambda3 == 0.0 and loaded.train.flags.mode == "baseline"
    assert loaded.model.transformer.layers == 2 and loaded.train.seed == 7


@pytest.mark.parametrize("text", [
    "no equals sign",
    " = 3",
    "train.nope = 1",
    "train.lr = 'fast'",
    "train.flags.task1_on = 1",
    "train.flags.task2_on = True\ntrain.flags.multi_view_on = False",
    "train.batch_size = 0",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        config_io.apply(RunConfig(), config_io.parse(text))


@pytest.mark.parametrize("name", ["baseline.cfg", "tiny.cfg"])
def test_bundled_configs_load(name):
    from pathlib import Path

    run = load_run_config(Path(__file__).parents[1] / "configs" / name)
    assert isinstance(run, RunConfig)
