"""Command-line entry point: ``hmerkit <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as config_io
from .data import corpus_vocab, ink_to_sample, load_manifest, read_inkml, read_pgm, synth_corpus, write_manifest
from .errors import HmerError, UsageError
from .latex import tokenize
from .metrics import distances_tsv, evaluate
from .posforest import encode_position_labels


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_corpus(samples, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(samples, out / "manifest.jsonl")
    corpus_vocab(samples).save(out / "vocab.txt")


def cmd_labels(args) -> None:
    tokens = tokenize(args.expr)
    if args.counts:
        for tok, n in sorted(Counter(tokens).items()):
            print(f"{tok}\t{n}")
        return
    labels = encode_position_labels(tokens)
    for tok, d, r in zip(tokens, labels.depths, labels.relpos):
        print(f"{tok}\t{d}\t{r}")


def cmd_synth(args) -> None:
    samples = synth_corpus(args.seed, args.n, args.max_depth)
    _write_corpus(samples, Path(args.out))
    print(f"wrote {len(samples)} samples to {args.out}")


def cmd_ingest(args) -> None:
    src = Path(args.inkml_dir)
    files = sorted(src.glob("*.inkml"))
    if not files:
        raise UsageError(f"no .inkml files in {src}")
    samples = [ink_to_sample(read_inkml(f)) for f in files]
    _write_corpus(samples, Path(args.out))
    print(f"ingested {len(samples)} files into {args.out}")


def _overrides(pairs: Sequence[str]) -> dict:
    for p in pairs:
        if "=" not in p:
            raise UsageError(f"--set expects key=value, got {p!r}")
    return config_io.parse("\n".join(pairs))


def cmd_train(args) -> None:
    from .train import fit, load_datasets, load_run_config

    values = _overrides(args.set)
    values.setdefault("train.seed", args.seed)
    if args.out:
        values["out_dir"] = args.out
    run = load_run_config(args.config, values)
    train, val = load_datasets(run.data)
    result = fit(run, train, val, resume=args.resume)
    print(f"steps {result.steps} best ExpRate {result.best_exprate:.2f}")
    print(f"log {result.log_path}")
    print(f"checkpoint {result.best_path}")


def _read_predictions(path: str) -> dict[str, list[str]]:
    preds = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        sid, _, toks = line.partition("\t")
        preds[sid] = toks.split()
    return preds


def cmd_eval(args) -> None:
    samples = load_manifest(args.manifest, load_images=args.predictions is None)
    if args.predictions is not None:
        table = _read_predictions(args.predictions)
        missing = [s.sample_id for s in samples if s.sample_id not in table]
        if missing:
            raise UsageError(f"no prediction for {len(missing)} samples, e.g. {missing[0]}")
        preds = [table[s.sample_id] for s in samples]
    else:
        from .train import load_checkpoint, predict_tokens

        model, run, _, _ = load_checkpoint(args.checkpoint)
        preds = predict_tokens(model, samples, max_len=run.train.decode_max_len)
    report = evaluate(preds, [s.tokens for s in samples])
    print(report.table())
    if args.distances:
        Path(args.distances).write_text(distances_tsv([s.sample_id for s in samples], report))


def cmd_predict(args) -> None:
    from .model import collate
    from .train import load_checkpoint

    model, run, _, _ = load_checkpoint(args.checkpoint)
    if args.manifest:
        items = [(s.sample_id, s.image) for s in load_manifest(args.manifest)]
    else:
        items = [(Path(p).stem, read_pgm(p)) for p in args.images]
    if not items:
        raise UsageError("predict needs --manifest or image paths")
    for sid, image in items:
        h, w = image.shape
        images = image.reshape(1, 1, h, w).astype(np.float32)
        tokens, _ = model.greedy_decode(images, np.array([w]), run.train.decode_max_len)
        line = f"{sid}\t{' '.join(tokens[0])}"
        if args.counts:
            counts = model.predict_counts(images, np.array([w]))
            if counts is not None:
                shown = {c: round(float(v), 2) for c, v in zip(model.vocab.classes, counts[0]) if v >= 0.5}
                line += f"\t{shown}"
        print(line)


def cmd_gradcheck(args) -> None:
    from .gradsuite import run_suite

    results = run_suite(seed=args.seed, with_model=not args.no_model, only=args.only)
    worst = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.kind:<10} {r.name:<20} {r.error:.3e} {status}")
        worst |= not r.passed
    if worst:
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hmerkit", description="Handwritten math expression recognition toolkit")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stdout")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("labels", help="position-forest (or count) labels for a LaTeX string")
    p.add_argument("--expr", required=True)
    p.add_argument("--counts", action="store_true", help="print symbol counts instead")
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--max-depth", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="rasterize a directory of InkML files into a manifest")
    p.add_argument("inkml_dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train from a key = value config file")
    p.add_argument("--config")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", help="continue from a last.ckpt")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a predictions TSV against a manifest")
    p.add_argument("--manifest", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="TSV lines: id<TAB>space-separated tokens")
    p.add_argument("--distances", help="write per-sample distances TSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="transcribe images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("images", nargs="*")
    p.add_argument("--counts", action="store_true", help="also print predicted symbol counts")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and module")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", help="run cases whose name contains this string")
    p.add_argument("--no-model", action="store_true", help="skip the full tiny-model check")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, stream=sys.stdout, format="%(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        print(ap.format_usage(), end="", file=sys.stderr)
        return 2
    except HmerError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
