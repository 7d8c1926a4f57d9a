"""Overfit the default multi-view model on the bundled 64-sample synthetic set.

Prints validation ExpRate at each evaluation and a final summary line.
Usage: python3 scripts/overfit.py [--out runs/overfit] [--steps 2000] [key=value ...]
"""
from __future__ import annotations

import argparse
import logging
import time

from hmerkit import config as config_io
from hmerkit.data import overfit_set
from hmerkit.train import RunConfig, fit, predict_tokens


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/overfit")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("overrides", nargs="*", help="dotted key=value config overrides")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    values = config_io.parse("\n".join(args.overrides))
    values.setdefault("train.max_steps", args.steps)
    values.setdefault("train.eval_every", 100)
    values.setdefault("train.stop_exprate", 100.0)
    values["out_dir"] = args.out
    run = config_io.apply(RunConfig(), values)
    samples = overfit_set()
    t0 = time.perf_counter()
    result = fit(run, samples)
    elapsed = time.perf_counter() - t0
    preds = predict_tokens(result.model, samples)
    exact = sum(p == s.tokens for p, s in zip(preds, samples))
    print(f"steps {result.steps} exact {exact}/{len(samples)} best ExpRate {result.best_exprate:.2f} "
          f"elapsed {elapsed:.0f}s")


if __name__ == "__main__":
    main()
