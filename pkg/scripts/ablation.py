"""Held-out comparison of the multi-view counting model against the lambda3 = 0 baseline.

Trains both configurations on the same 512 synthetic samples and scores them on
128 held-out ones. Informational only: small runs are noisy.
Usage: python3 scripts/ablation.py [--steps 2000] [--seed 0] [--out runs/ablation] [key=value ...]
"""
from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from hmerkit import config as config_io
from hmerkit.data import grammar_vocab, synth_corpus
from hmerkit.train import RunConfig, evaluate_model, fit

MODES = {"multiview": {}, "baseline": {"train.flags.multi_view_on": False, "train.flags.task1_on": False,
                                       "train.weights.lambda3": 0.0}}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=512)
    ap.add_argument("--n-test", type=int, default=128)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("overrides", nargs="*", help="dotted key=value config overrides")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    train = synth_corpus(seed=1, n=args.n_train, max_depth=2)
    test = synth_corpus(seed=2, n=args.n_test, max_depth=2)
    vocab = grammar_vocab()
    results = {}
    for mode, extra in MODES.items():
        values = config_io.parse("\n".join(args.overrides))
        values.update(extra)
        values.update({"train.max_steps": args.steps, "train.eval_every": args.steps,
                       "train.seed": args.seed, "out_dir": str(Path(args.out) / mode)})
        run = config_io.apply(RunConfig(), values)
        t0 = time.perf_counter()
        res = fit(run, train, val=test, vocab=vocab)
        report = evaluate_model(res.model, test, run.train.decode_max_len)
        results[mode] = {"exprate": report.exprate, "le1": report.le1, "le2": report.le2, "le3": report.le3,
                         "seconds": round(time.perf_counter() - t0)}
        print(f"{mode:<10} held-out {report.summary()}  ({results[mode]['seconds']}s)", flush=True)
    diff = results["multiview"]["exprate"] - results["baseline"]["exprate"]
    print(f"multiview - baseline ExpRate: {diff:+.2f} points")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "results.json").write_text(json.dumps(results, indent=2) + "\n")


if __name__ == "__main__":
    main()
