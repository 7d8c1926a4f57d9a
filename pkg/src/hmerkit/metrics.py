"""Expression-level recognition metrics built on token edit distance."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import EmptyEvaluation, PairCountMismatch
from .latex import RESERVED


def edit_distance(pred: Sequence[str], truth: Sequence[str]) -> int:
    """Levenshtein distance over tokens (unit cost insert, delete, substitute)."""
    if len(pred) < len(truth):
        pred, truth = truth, pred
    prev = list(range(len(truth) + 1))
    for i, p in enumerate(pred, 1):
        cur = [i]
        for j, t in enumerate(truth, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (p != t)))
        prev = cur
    return prev[-1]


def _strip(tokens: Sequence[str]) -> list[str]:
    return [t for t in tokens if t not in RESERVED]


@dataclass
class MetricsReport:
    exprate: float
    le1: float
    le2: float
    le3: float
    n_samples: int
    distances: list[int] = field(default_factory=list)

    def table(self) -> str:
        """Fixed-order report, one metric per line."""
        rows = [("ExpRate", self.exprate), ("<=1", self.le1), ("<=2", self.le2), ("<=3", self.le3)]
        lines = [f"{name:<8}{value:.2f}" for name, value in rows]
        return "\n".join(lines + [f"{'N':<8}{self.n_samples}"])

    def summary(self) -> str:
        return (f"ExpRate {self.exprate:.2f} <=1 {self.le1:.2f} <=2 {self.le2:.2f} "
                f"<=3 {self.le3:.2f} N {self.n_samples}")


def evaluate(predictions: Sequence[Sequence[str]], truths: Sequence[Sequence[str]]) -> MetricsReport:
    if len(predictions) != len(truths):
        raise PairCountMismatch(f"{len(predictions)} predictions for {len(truths)} references")
    if not truths:
        raise EmptyEvaluation("nothing to evaluate")
    dists = [edit_distance(_strip(p), _strip(t)) for p, t in zip(predictions, truths)]
    n = len(dists)

    def rate(k: int) -> float:
        return 100.0 * sum(d <= k for d in dists) / n

    return MetricsReport(rate(0), rate(1), rate(2), rate(3), n, dists)


def distances_tsv(ids: Sequence[str], report: MetricsReport) -> str:
    lines = ["id\tdistance"] + [f"{i}\t{d}" for i, d in zip(ids, report.distances)]
    return "\n".join(lines) + "\n"
