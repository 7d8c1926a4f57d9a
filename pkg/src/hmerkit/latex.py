"""LaTeX math lexing and the symbol vocabulary."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    EmptyCorpus,
    EmptySequence,
    IdOutOfRange,
    IoFailure,
    OutOfVocab,
    UnbalancedBraces,
    UnknownCommand,
)

GREEK = (
    "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu nu xi "
    "pi rho sigma tau upsilon phi chi psi omega "
    "Gamma Delta Theta Lambda Xi Pi Sigma Phi Psi Omega"
).split()

COMMANDS = frozenset(
    ["\\" + g for g in GREEK]
    + [
        "\\frac", "\\sqrt", "\\sum", "\\int", "\\lim", "\\log", "\\sin", "\\cos",
        "\\tan", "\\leq", "\\geq", "\\neq", "\\lt", "\\gt", "\\pm", "\\times",
        "\\div", "\\cdot", "\\rightarrow", "\\infty", "\\ldots", "\\prime",
        "\\exists", "\\forall", "\\in", "\\limits",
    ]
)

# single escaped characters that stand for a printed symbol
ESCAPES = frozenset(["\\{", "\\}", "\\|"])

SOS, EOS, PAD = "<sos>", "<eos>", "<pad>"
RESERVED = (SOS, EOS, PAD)


def tokenize(source: str) -> list[str]:
    """Split a math-mode LaTeX string into lexemes.

    Commands (``\\frac``) and escaped characters (``\\{``) are single tokens;
    every other non-space character is its own token, so ``12`` lexes as
    ``1``, ``2``. Whitespace only separates.
    """
    tokens: list[str] = []
    i, n = 0, len(source)
    depth = 0
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "\\":
            j = i + 1
            while j < n and source[j].isascii() and source[j].isalpha():
                j += 1
            if j == i + 1:
                if j >= n:
                    raise UnknownCommand("dangling backslash at end of input")
                tok = source[i : j + 1]
                if tok not in ESCAPES:
                    raise UnknownCommand(f"unsupported escape {tok!r} at offset {i}")
                j += 1
            else:
                tok = source[i:j]
                if tok not in COMMANDS:
                    raise UnknownCommand(f"unsupported command {tok!r} at offset {i}")
            tokens.append(tok)
            i = j
            continue
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth < 0:
                raise UnbalancedBraces(f"unmatched '}}' at offset {i}")
        tokens.append(ch)
        i += 1
    if depth:
        raise UnbalancedBraces(f"{depth} unclosed '{{' in {source!r}")
    if not tokens:
        raise EmptySequence("source contains no tokens")
    return tokens


def check_sequence(tokens: Sequence[str]) -> None:
    """Validate the TokenSeq invariants: non-empty, balanced braces."""
    if not tokens:
        raise EmptySequence("token sequence must have length >= 1")
    depth = 0
    for t in tokens:
        if t == "{":
            depth += 1
        elif t == "}":
            depth -= 1
            if depth < 0:
                raise UnbalancedBraces("unmatched '}'")
    if depth:
        raise UnbalancedBraces(f"{depth} unclosed '{{'")


def render(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class Vocab:
    """Symbol classes in sorted order followed by the reserved tokens.

    Class ``c`` has id ``classes.index(c)``; ``sos``, ``eos`` and ``pad`` take
    the three ids after the last class.
    """

    classes: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("vocabulary classes must be unique")
        if any(c in RESERVED for c in self.classes):
            raise ValueError("reserved tokens cannot be symbol classes")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.entries)})

    @property
    def entries(self) -> tuple[str, ...]:
        return self.classes + RESERVED

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return len(self.classes) + len(RESERVED)

    @property
    def sos(self) -> int:
        return len(self.classes)

    @property
    def eos(self) -> int:
        return len(self.classes) + 1

    @property
    def pad(self) -> int:
        return len(self.classes) + 2

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise OutOfVocab(f"token {token!r} not in vocabulary") from None

    def lookup(self, idx: int) -> str:
        if not 0 <= idx < len(self):
            raise IdOutOfRange(f"id {idx} outside [0, {len(self)})")
        return self.entries[idx]

    def to_text(self) -> str:
        return "\n".join(self.entries) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "vocab") -> "Vocab":
        lines = [ln for ln in text.splitlines() if ln]
        if tuple(lines[-len(RESERVED):]) != RESERVED:
            raise IoFailure(f"{source}: reserved tokens {RESERVED} must close the file")
        return cls(tuple(lines[: -len(RESERVED)]))

    def save(self, path: str | Path) -> None:
        try:
            Path(path).write_text(self.to_text(), encoding="utf-8")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        return cls.from_text(text, str(path))


def build_vocab(corpus: Iterable[Sequence[str]]) -> Vocab:
    seen: set[str] = set()
    empty = True
    for seq in corpus:
        empty = False
        seen.update(seq)
    if empty:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    return Vocab(tuple(sorted(seen)))


def encode_ids(tokens: Sequence[str], vocab: Vocab) -> list[int]:
    return [vocab.index(t) for t in tokens]


def decode_ids(ids: Sequence[int], vocab: Vocab) -> list[str]:
    tokens = [vocab.lookup(int(i)) for i in ids]
    if not tokens:
        raise EmptySequence("decoded sequence is empty")
    return tokens
