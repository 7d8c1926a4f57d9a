"""Position-forest parsing and per-token (nesting depth, relative position) labels.

An expression is split left to right into substructures. Each substructure is
a small tree: its main part is the root, its upper part (superscript,
numerator, radical index) the left child and its lower part (subscript,
denominator) the right child. A token's depth counts the upper/lower/radicand
regions around it; its relative position is the kind of the innermost one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import (
    DepthExceeded,
    MalformedFraction,
    MalformedSqrt,
    MalformedSuperscript,
    UnbalancedBraces,
)
from .latex import check_sequence

D_MAX = 8

MIDDLE, UPPER, LOWER = "middle", "upper", "lower"
RELPOS_CLASSES = (MIDDLE, UPPER, LOWER)
RELPOS_INDEX = {name: i for i, name in enumerate(RELPOS_CLASSES)}

SCRIPT_TOKENS = frozenset({"^", "_"})
# tokens that can never stand alone as a script argument or atom
STRUCTURAL = frozenset({"^", "_", "{", "}"})


@dataclass
class ForestNode:
    """One substructure tree.

    ``span`` covers every token of the node. The optional region spans cover
    the delimiters of each child region too (``^`` plus its braces, the braces
    of a numerator, ``[``/``]`` of a radical index), since those tokens are
    labelled with the region they delimit.
    """

    kind: str  # atom | sup_sub | fraction | sqrt | group
    span: tuple[int, int]
    main: list["ForestNode"] = field(default_factory=list)
    upper: list["ForestNode"] = field(default_factory=list)
    lower: list["ForestNode"] = field(default_factory=list)
    main_span: tuple[int, int] | None = None
    upper_span: tuple[int, int] | None = None
    lower_span: tuple[int, int] | None = None

    def __repr__(self) -> str:
        parts = [f"{self.kind}{list(self.span)}"]
        for name in ("main", "upper", "lower"):
            kids = getattr(self, name)
            if kids:
                parts.append(f"{name}={kids!r}")
        return "(" + " ".join(parts) + ")"


@dataclass
class PositionLabels:
    depths: list[int]
    relpos: list[str]

    def __len__(self) -> int:
        return len(self.depths)

    @property
    def relpos_ids(self) -> list[int]:
        return [RELPOS_INDEX[r] for r in self.relpos]


class _Parser:
    def __init__(self, tokens: Sequence[str], d_max: int):
        self.toks = tokens
        self.pos = 0
        self.d_max = d_max

    def peek(self) -> str | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def check_depth(self, depth: int) -> None:
        if depth > self.d_max:
            raise DepthExceeded(f"nesting depth {depth} exceeds D_max={self.d_max}")

    def sequence(self, depth: int, closer: str | None) -> list[ForestNode]:
        nodes = []
        while True:
            tok = self.peek()
            if tok is None:
                if closer is not None:
                    raise UnbalancedBraces(f"missing {closer!r}")
                return nodes
            if tok == closer:
                return nodes
            if tok == "}":
                raise UnbalancedBraces(f"unexpected '}}' at token {self.pos}")
            nodes.append(self.item(depth))

    def item(self, depth: int) -> ForestNode:
        start = self.pos
        tok = self.peek()
        if tok in SCRIPT_TOKENS:
            raise MalformedSuperscript(f"{tok!r} at token {start} has no base")
        base = self.primary(depth)
        if self.peek() not in SCRIPT_TOKENS:
            return base
        node = ForestNode("sup_sub", (start, start), main=[base], main_span=base.span)
        while self.peek() in SCRIPT_TOKENS:
            op_pos = self.pos
            op = self.toks[op_pos]
            taken = node.upper_span if op == "^" else node.lower_span
            if taken is not None:
                raise MalformedSuperscript(f"double {op!r} at token {op_pos}")
            self.pos += 1
            self.check_depth(depth + 1)
            arg, _ = self.argument(depth + 1, MalformedSuperscript, op)
            if op == "^":
                node.upper, node.upper_span = arg, (op_pos, self.pos)
            else:
                node.lower, node.lower_span = arg, (op_pos, self.pos)
        node.span = (start, self.pos)
        return node

    def primary(self, depth: int) -> ForestNode:
        start = self.pos
        tok = self.toks[start]
        if tok == "{":
            inner, span = self.braced(depth, UnbalancedBraces, "group")
            return ForestNode("group", span, main=inner, main_span=span)
        if tok == "\\frac":
            self.pos += 1
            self.check_depth(depth + 1)
            num, num_span = self.braced(depth + 1, MalformedFraction, "numerator")
            den, den_span = self.braced(depth + 1, MalformedFraction, "denominator")
            return ForestNode(
                "fraction", (start, self.pos),
                upper=num, lower=den, upper_span=num_span, lower_span=den_span,
            )
        if tok == "\\sqrt":
            self.pos += 1
            self.check_depth(depth + 1)
            node = ForestNode("sqrt", (start, start))
            if self.peek() == "[":
                open_pos = self.pos
                self.pos += 1
                node.upper = self.sequence(depth + 1, "]")
                if self.peek() != "]":
                    raise MalformedSqrt(f"unterminated radical index at token {start}")
                self.pos += 1
                node.upper_span = (open_pos, self.pos)
            node.main, node.main_span = self.argument(depth + 1, MalformedSqrt, "\\sqrt")
            node.span = (start, self.pos)
            return node
        self.pos += 1
        return ForestNode("atom", (start, start + 1))

    def braced(self, depth, error, what):
        open_pos = self.pos
        if self.peek() != "{":
            raise error(f"expected '{{' opening {what} at token {open_pos}")
        self.pos += 1
        inner = self.sequence(depth, "}")
        self.pos += 1
        return inner, (open_pos, self.pos)

    def argument(self, depth, error, what):
        """Braced group or a single non-structural token."""
        tok = self.peek()
        if tok == "{":
            return self.braced(depth, error, what)
        if tok is None or tok in STRUCTURAL or tok in ("\\frac", "\\sqrt"):
            raise error(f"{what} at token {self.pos - 1} lacks an argument")
        self.pos += 1
        return [ForestNode("atom", (self.pos - 1, self.pos))], (self.pos - 1, self.pos)


def parse_forest(tokens: Sequence[str], d_max: int = D_MAX) -> list[ForestNode]:
    check_sequence(tokens)
    parser = _Parser(tokens, d_max)
    forest = parser.sequence(0, None)
    return forest


def assign_labels(forest: list[ForestNode], length: int, d_max: int = D_MAX) -> PositionLabels:
    depths: list[int | None] = [None] * length
    relpos: list[str | None] = [None] * length

    def mark(span: tuple[int, int], d: int, r: str) -> None:
        if d > d_max:
            raise DepthExceeded(f"nesting depth {d} exceeds D_max={d_max}")
        for i in range(*span):
            depths[i] = d
            relpos[i] = r

    def visit(node: ForestNode, d: int, r: str) -> None:
        # outer labels first; nested regions overwrite their own tokens
        mark(node.span, d, r)
        if node.kind == "sqrt":
            mark(node.main_span, d + 1, MIDDLE)
            inner_main = (d + 1, MIDDLE)
        else:
            inner_main = (d, r)
        for child in node.main:
            visit(child, *inner_main)
        if node.upper_span is not None:
            mark(node.upper_span, d + 1, UPPER)
            for child in node.upper:
                visit(child, d + 1, UPPER)
        if node.lower_span is not None:
            mark(node.lower_span, d + 1, LOWER)
            for child in node.lower:
                visit(child, d + 1, LOWER)

    for node in forest:
        visit(node, 0, MIDDLE)
    missing = [i for i, d in enumerate(depths) if d is None]
    if missing:
        raise ValueError(f"forest does not cover tokens {missing}")
    return PositionLabels([int(d) for d in depths], [str(r) for r in relpos])


def encode_position_labels(tokens: Sequence[str], d_max: int = D_MAX) -> PositionLabels:
    return assign_labels(parse_forest(tokens, d_max), len(tokens), d_max)


def max_depth(tokens: Sequence[str]) -> int:
    return max(encode_position_labels(tokens).depths)
