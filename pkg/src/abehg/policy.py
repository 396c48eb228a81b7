"""Threshold-gate access policies.

A policy is a tree of :class:`Leaf` attributes and :class:`Gate` nodes that
need ``threshold`` of their ordered children.  The canonical text form is
postfix (``"a b 2of2 c 1of2"``); an infix form with ``AND``/``OR``/``kof(...)``
is accepted as input.

Attributes are opaque normalized strings, so ``"Position: Doctor"`` and
``"position = Doctor"`` both become ``"position:doctor"``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Union

from .errors import PolicyParseError

_SEP = re.compile(r"\s*[:=]\s*")
_WS = re.compile(r"\s+")
_GATE = re.compile(r"(\d+)of(\d+)")
_GATE_LIKE = re.compile(r"\d+of\d*|\d*of\d+")
_NEEDS_QUOTE = re.compile(r'[\s"\\()\[\],]')


def normalize_attribute(raw: str) -> str:
    text = _WS.sub(" ", _SEP.sub(":", raw.strip()))
    if not text:
        raise PolicyParseError("empty", "attribute is empty")
    return text.lower()


def attribute_set(attrs: Iterable[str] | str) -> frozenset[str]:
    """Normalize attributes into a set; a string is split on commas."""
    if isinstance(attrs, str):
        attrs = [a for a in attrs.split(",") if a.strip()]
    return frozenset(normalize_attribute(a) for a in attrs)


@dataclass(frozen=True)
class Leaf:
    attribute: str

    def __post_init__(self):
        object.__setattr__(self, "attribute", normalize_attribute(self.attribute))


@dataclass(frozen=True)
class Gate:
    threshold: int
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise PolicyParseError("empty", "gate without children")
        if not 1 <= self.threshold <= len(self.children):
            raise PolicyParseError(
                "threshold", f"threshold {self.threshold} outside 1..{len(self.children)}"
            )


AccessTree = Union[Leaf, Gate]
Path = tuple


def walk_leaves(tree: AccessTree, path: Path = ()) -> Iterator[tuple[Path, Leaf]]:
    """Leaves in pre-order with their 1-based child-index paths."""
    if isinstance(tree, Leaf):
        yield path, tree
        return
    for i, child in enumerate(tree.children, start=1):
        yield from walk_leaves(child, path + (i,))


def leaf_count(tree: AccessTree) -> int:
    return sum(1 for _ in walk_leaves(tree))


def node_count(tree: AccessTree) -> int:
    if isinstance(tree, Leaf):
        return 1
    return 1 + sum(node_count(c) for c in tree.children)


# -- postfix ---------------------------------------------------------------

def _quote(attr: str) -> str:
    if _NEEDS_QUOTE.search(attr) or _GATE_LIKE.fullmatch(attr):
        return '"' + attr.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return attr


def _unquote(token: str) -> str:
    return re.sub(r"\\(.)", r"\1", token[1:-1])


def _postfix_tokens(text: str) -> list[str]:
    return re.findall(r'"(?:[^"\\]|\\.)*"|\S+', _SEP.sub(":", text))


def parse_postfix(text: str) -> AccessTree:
    stack: list[AccessTree] = []
    tokens = _postfix_tokens(text)
    if not tokens:
        raise PolicyParseError("empty", "policy is empty")
    for pos, tok in enumerate(tokens, start=1):
        if tok.startswith('"'):
            if len(tok) < 2 or not tok.endswith('"'):
                raise PolicyParseError("syntax", "unterminated quote", pos)
            stack.append(Leaf(_unquote(tok)))
            continue
        m = _GATE.fullmatch(tok)
        if m:
            k, n = int(m.group(1)), int(m.group(2))
            if not 1 <= k <= n:
                raise PolicyParseError("threshold", f"gate {tok} needs 1 <= k <= n", pos)
            if len(stack) < n:
                raise PolicyParseError("underflow", f"gate {tok} needs {n} operands, have {len(stack)}", pos)
            children = stack[-n:]
            del stack[-n:]
            stack.append(Gate(k, tuple(children)))
        elif _GATE_LIKE.fullmatch(tok):
            raise PolicyParseError("malformed_gate", f"bad gate token {tok!r}", pos)
        else:
            stack.append(Leaf(tok))
    if len(stack) != 1:
        raise PolicyParseError("leftover", f"{len(stack)} nodes left on the stack", len(tokens))
    return stack[0]


def serialize_policy(tree: AccessTree) -> str:
    out: list[str] = []

    def emit(node: AccessTree) -> None:
        if isinstance(node, Leaf):
            out.append(_quote(node.attribute))
            return
        for child in node.children:
            emit(child)
        out.append(f"{node.threshold}of{len(node.children)}")

    emit(tree)
    return " ".join(out)


def parse_policy(text: str) -> AccessTree:
    """Accept postfix or infix text; infix is detected by its operators."""
    bare = re.sub(r'"(?:[^"\\]|\\.)*"', " ", text)
    if re.search(r"[()\[\],]|\b(?:and|or)\b", bare, re.IGNORECASE):
        return parse_infix(text)
    return parse_postfix(text)


# -- infix -----------------------------------------------------------------

_INFIX_TOKEN = re.compile(r'\s*(?:(?P<kof>\d+of\s*\()|(?P<punct>[()\[\],])|(?P<quoted>"(?:[^"\\]|\\.)*")|(?P<word>[^\s()\[\],"]+))')
_CLOSE = {"(": ")", "[": "]"}


class _InfixParser:
    def __init__(self, text: str):
        self.tokens: list[tuple[str, str]] = []
        src = _SEP.sub(":", text)
        pos = 0
        while pos < len(src):
            if src[pos:].strip() == "":
                break
            m = _INFIX_TOKEN.match(src, pos)
            if not m:
                raise PolicyParseError("syntax", f"unexpected character {src[pos:].strip()[:1]!r}")
            pos = m.end()
            kind = m.lastgroup
            value = m.group(kind)
            if kind == "word" and value.upper() in ("AND", "OR"):
                kind = value.upper()
            self.tokens.append((kind, value))
        self.i = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise PolicyParseError("syntax", "unexpected end of policy", self.i + 1)
        self.i += 1
        return tok

    def parse(self) -> AccessTree:
        if not self.tokens:
            raise PolicyParseError("empty", "policy is empty")
        tree = self.expr()
        if self.peek() is not None:
            kind, value = self.peek()
            reason = "unbalanced" if value in (")", "]") else "syntax"
            raise PolicyParseError(reason, f"unexpected {value!r}", self.i + 1)
        return tree

    def expr(self) -> AccessTree:
        terms = [self.term()]
        while self.peek() and self.peek()[0] == "OR":
            self.take()
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else Gate(1, tuple(terms))

    def term(self) -> AccessTree:
        factors = [self.factor()]
        while self.peek() and self.peek()[0] == "AND":
            self.take()
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else Gate(len(factors), tuple(factors))

    def factor(self) -> AccessTree:
        pos = self.i + 1
        kind, value = self.take()
        if kind == "punct" and value in _CLOSE:
            if self.peek() and self.peek()[1] == _CLOSE[value]:
                raise PolicyParseError("empty", "empty parentheses", pos)
            inner = self.expr()
            self.expect(_CLOSE[value])
            return inner
        if kind == "kof":
            k = int(value.split("of")[0])
            if self.peek() and self.peek()[1] == ")":
                raise PolicyParseError("empty", "empty operand list", pos)
            operands = [self.expr()]
            while self.peek() and self.peek()[1] == ",":
                self.take()
                operands.append(self.expr())
            self.expect(")")
            if not 1 <= k <= len(operands):
                raise PolicyParseError("threshold", f"{k}of needs 1 <= k <= {len(operands)}", pos)
            return Gate(k, tuple(operands))
        if kind == "quoted":
            return Leaf(_unquote(value))
        if kind == "word":
            words = [value]
            while self.peek() and self.peek()[0] == "word":
                words.append(self.take()[1])
            return Leaf(" ".join(words))
        raise PolicyParseError("syntax", f"unexpected {value!r}", pos)

    def expect(self, closer: str) -> None:
        tok = self.peek()
        if tok is None or tok[1] != closer:
            raise PolicyParseError("unbalanced", f"expected {closer!r}", self.i + 1)
        self.take()


def parse_infix(text: str) -> AccessTree:
    """Parse ``AND``/``OR``/``kof(...)`` text.

    A chain of the same operator at one nesting level becomes one gate:
    ``a OR b OR c`` is ``1of3`` and ``a AND b AND c`` is ``3of3``.
    Brackets (``()`` or ``[]``) always start a new child.
    """
    return _InfixParser(text).parse()


# -- evaluation ------------------------------------------------------------

def satisfies(tree: AccessTree, attrs: Iterable[str]) -> bool:
    attrs = attrs if isinstance(attrs, frozenset) else frozenset(attrs)
    if isinstance(tree, Leaf):
        return tree.attribute in attrs
    return sum(satisfies(c, attrs) for c in tree.children) >= tree.threshold


@dataclass(frozen=True)
class SatisfyingAssignment:
    """Child choices per used gate, plus the leaves that end up used.

    Both maps are keyed by 1-based child-index paths from the root.
    """

    chosen: Mapping[Path, tuple[int, ...]] = field(default_factory=dict)
    leaves: Mapping[Path, str] = field(default_factory=dict)

    @property
    def attributes(self) -> frozenset[str]:
        return frozenset(self.leaves.values())


def min_satisfying_assignment(tree: AccessTree, attrs: Iterable[str]) -> SatisfyingAssignment | None:
    """Pick ``k`` satisfied children per gate using the fewest leaves.

    Ties go to the lowest child indices.
    """
    attrs = frozenset(attrs)

    def best(node: AccessTree, path: Path):
        if isinstance(node, Leaf):
            if node.attribute in attrs:
                return 1, {}, {path: node.attribute}
            return None
        options = []
        for i, child in enumerate(node.children, start=1):
            sub = best(child, path + (i,))
            if sub is not None:
                options.append((sub[0], i, sub))
        if len(options) < node.threshold:
            return None
        picked = sorted(options, key=lambda o: (o[0], o[1]))[: node.threshold]
        picked.sort(key=lambda o: o[1])
        chosen = {path: tuple(o[1] for o in picked)}
        leaves: dict = {}
        for _, _, (_, sub_chosen, sub_leaves) in picked:
            chosen.update(sub_chosen)
            leaves.update(sub_leaves)
        return sum(o[0] for o in picked), chosen, leaves

    result = best(tree, ())
    if result is None:
        return None
    return SatisfyingAssignment(chosen=result[1], leaves=result[2])


def policy_attributes(tree: AccessTree) -> frozenset[str]:
    return frozenset(leaf.attribute for _, leaf in walk_leaves(tree))


__all__ = [
    "AccessTree", "Gate", "Leaf", "SatisfyingAssignment", "attribute_set",
    "leaf_count", "min_satisfying_assignment", "node_count", "normalize_attribute",
    "parse_infix", "parse_policy", "parse_postfix", "policy_attributes",
    "satisfies", "serialize_policy", "walk_leaves",
]
