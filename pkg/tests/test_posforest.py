import pytest
from hypothesis import given, settings, strategies as st

from oracles import recursive_labels, stack_labels
from hmerkit.data import synth_expression
from hmerkit.errors import DepthExceeded, MalformedFraction, MalformedSqrt, MalformedSuperscript
from hmerkit.latex import tokenize
from hmerkit.posforest import D_MAX, encode_position_labels, max_depth, parse_forest


def labels(src):
    lab = encode_position_labels(tokenize(src))
    return list(zip(lab.depths, lab.relpos))


def test_single_atom():
    forest = parse_forest(["a"])
    assert len(forest) == 1 and forest[0].kind == "atom" and forest[0].span == (0, 1)
    assert labels("a") == [(0, "middle")]


def test_superscript_tree_and_labels():
    (node,) = parse_forest(tokenize("x^{2}"))
    assert node.kind == "sup_sub"
    assert node.main[0].kind == "atom" and node.main[0].span == (0, 1)
    assert [n.span for n in node.upper] == [(3, 4)]
    assert labels("x^{2}") == [(0, "middle")] + [(1, "upper")] * 4


def test_fraction_tree_and_labels():
    (node,) = parse_forest(tokenize(r"\frac{a}{b}"))
    assert node.kind == "fraction"
    assert [n.span for n in node.upper] == [(2, 3)] and [n.span for n in node.lower] == [(5, 6)]
    lab = labels(r"\frac{a}{b}")
    assert lab[0] == (0, "middle") and lab[2] == (1, "upper") and lab[5] == (1, "lower")


def test_flat_and_nested_examples():
    assert labels("a+b") == [(0, "middle")] * 3
    lab = labels("x^{y^{2}}")
    assert lab[3] == (1, "upper") and lab[6] == (2, "upper")
    assert labels(r"\sqrt{x}")[2] == (1, "middle")
    assert labels(r"\sqrt[n]{x}")[2] == (1, "upper")
    assert labels("x_{i}")[3] == (1, "lower")


def test_parse_errors():
    with pytest.raises(MalformedSuperscript):
        encode_position_labels(tokenize("x^"))
    with pytest.raises(MalformedSuperscript):
        encode_position_labels(tokenize("x^{2}^{3}"))
    with pytest.raises(MalformedFraction):
        encode_position_labels(tokenize(r"\frac{a}"))
    with pytest.raises(MalformedSqrt):
        encode_position_labels(tokenize(r"\sqrt"))


def test_depth_limit():
    deep = "x" + "^{x" * D_MAX + "}" * D_MAX
    assert max_depth(tokenize(deep)) == D_MAX
    too_deep = "x" + "^{x" * (D_MAX + 1) + "}" * (D_MAX + 1)
    with pytest.raises(DepthExceeded):
        encode_position_labels(tokenize(too_deep))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 3))
def test_labels_match_both_oracles(seed, depth):
    toks = synth_expression(seed, depth)
    lab = encode_position_labels(toks)
    assert len(lab.depths) == len(toks) == len(lab.relpos)
    assert (lab.depths, lab.relpos) == stack_labels(toks) == recursive_labels(toks)
    assert max(lab.depths) <= depth


@given(st.lists(st.sampled_from(list("abcxyz0123+-=") + [r"\alpha", r"\times"]), min_size=1, max_size=20))
def test_flat_sequences_are_all_middle(tokens):
    lab = encode_position_labels(tokens)
    assert set(zip(lab.depths, lab.relpos)) == {(0, "middle")}


# random nested expressions beyond the synthetic grammar: optional sqrt index, bare groups, unbraced scripts
def _expr(draw, depth):
    parts = []
    for _ in range(draw(st.integers(1, 3))):
        kind = draw(st.sampled_from(["atom", "atom", "sup", "sub", "frac", "sqrt", "group"] if depth else ["atom"]))
        if kind == "atom":
            parts.append(draw(st.sampled_from(["a", "x", "1", "+"])))
        elif kind in ("sup", "sub"):
            op = "^" if kind == "sup" else "_"
            arg = draw(st.sampled_from(["2", None]))
            parts.append("y" + op + (arg if arg else "{" + _expr(draw, depth - 1) + "}"))
        elif kind == "frac":
            parts.append(r"\frac{" + _expr(draw, depth - 1) + "}{" + _expr(draw, depth - 1) + "}")
        elif kind == "sqrt":
            index = "[" + _expr(draw, depth - 1) + "]" if draw(st.booleans()) else ""
            parts.append(r"\sqrt" + index + "{" + _expr(draw, depth - 1) + "}")
        else:
            parts.append("{" + _expr(draw, depth - 1) + "}")
    return " ".join(parts)


@st.composite
def expressions(draw):
    return _expr(draw, draw(st.integers(0, 4)))


@settings(max_examples=300, deadline=None)
@given(expressions())
def test_wider_grammar_matches_oracles(src):
    toks = tokenize(src)
    lab = encode_position_labels(toks)
    assert (lab.depths, lab.relpos) == stack_labels(toks) == recursive_labels(toks)
