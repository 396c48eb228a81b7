"""Shared fixtures, worked-example user rows and independent oracles for the test suite."""

from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import strategies as st

from abehg import cpabe, group
from abehg.policy import Gate, Leaf

POLICY_T = (
    "Position: Doctor Position: Researcher Position: Professor 1of3 Department: Radiology 2of2 "
    "Position: PhD Position: Postdoc 1of3 University: AMU 2of2"
)
POLICY_T_BOOLEAN = (
    "[[[[position = Doctor OR position = Researcher OR position = Professor] AND Department = Radiology]"
    " OR position = PhD OR position = Postdoc] AND University = AMU]"
)

# Attribute sets of the eight data users and whether each satisfies T.
USER_ROWS = [
    (["Position: Doctor"], False),
    (["Position: PhD", "University: AMU"], True),
    (["Position: Doctor", "Department: Radiology", "University: AMU"], True),
    (["Position: PhD", "College: JNMC", "University: AMU", "Department: Radiology", "City: Aligarh"], True),
    (["Position: Researcher", "University: AMU", "Department: Radiology", "City: Aligarh", "College: JNMC"], True),
    (["Position: Postdoc", "College: JNMC", "University: AMU", "Department: Radiology", "City: Aligarh",
      "Position: Researcher"], True),
    (["Position: PhD", "College: JNMC", "University: AMU", "Department: Radiology", "City: Aligarh",
      "Position: Researcher", "Status: Temporary"], True),
    (["Position: Doctor", "College: JNMC", "University: AMU", "Department: Radiology", "City: Aligarh",
      "Position: Researcher", "Status: Permanent", "Year: 2022"], True),
]

ATTR_POOL = [f"a{i}" for i in range(8)]


def oracle_satisfies(tree, attrs) -> bool:
    """Enumerate every k-subset of children; no counting shortcut."""
    if isinstance(tree, Leaf):
        return tree.attribute in attrs
    return any(
        all(oracle_satisfies(c, attrs) for c in subset)
        for subset in itertools.combinations(tree.children, tree.threshold)
    )


def oracle_min_cover(tree, attrs) -> int | None:
    """Smallest subset of ``attrs`` that still satisfies ``tree``, by exhaustion."""
    relevant = sorted(a for a in attrs if a in {leaf.attribute for leaf in iter_leaves(tree)})
    for size in range(len(relevant) + 1):
        for subset in itertools.combinations(relevant, size):
            if oracle_satisfies(tree, set(subset)):
                return size
    return None


def iter_leaves(tree):
    if isinstance(tree, Leaf):
        yield tree
    else:
        for c in tree.children:
            yield from iter_leaves(c)


def count_nodes(tree) -> int:
    return 1 if isinstance(tree, Leaf) else 1 + sum(count_nodes(c) for c in tree.children)


def random_tree(rng: random.Random, max_nodes: int, pool=ATTR_POOL, distinct: bool = False):
    """Random access tree with at most ``max_nodes`` nodes."""
    available = list(pool)
    rng.shuffle(available)

    def leaf():
        return Leaf(available.pop() if distinct else rng.choice(pool))

    def build(budget: int, root: bool = False):
        if budget < 3 or (not root and rng.random() < 0.35) or (distinct and len(available) < 2):
            return leaf(), 1
        n = rng.randint(2, min(4, budget - 1))
        children, used = [], 1
        for i in range(n):
            remaining = n - i - 1
            if distinct and not available:
                break
            child, size = build(budget - used - remaining)
            children.append(child)
            used += size
        if len(children) == 1:
            return children[0], used - 1
        return Gate(rng.randint(1, len(children)), tuple(children)), used

    return build(max_nodes, root=True)[0]


@st.composite
def trees(draw, max_nodes: int = 15, pool=ATTR_POOL):
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    return random_tree(random.Random(seed), max_nodes, pool)


@st.composite
def attr_sets(draw, pool=ATTR_POOL):
    return frozenset(draw(st.sets(st.sampled_from(pool))))


@pytest.fixture(scope="session")
def keys():
    return cpabe.setup(group.SystemEntropy())


@pytest.fixture(scope="session")
def tree_t():
    from abehg.policy import parse_postfix

    return parse_postfix(POLICY_T)


# -- acceptance reporting --------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, str] = {}


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
