import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tagjoin.query import Atom  # noqa: E402
from tagjoin.tag_store import Schema, build_tag  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def _schema(rels):
    return Schema.from_dict({"relations": [
        {"name": n, "attrs": [{"name": a, "type": t} for a, t in attrs]} for n, attrs in rels]})


I1_SCHEMA = _schema([("R", [("A", "string"), ("B", "string")]), ("S", [("B", "string"), ("C", "string")])])
I1_DB = {
    "R": [("a1", "b1"), ("a2", "b1"), ("a3", "b1"), ("a4", "b2")],
    "S": [("b1", "c1"), ("b1", "c2"), ("b1", "c3"), ("b3", "c4")],
}

TRIANGLE_ATOMS = (Atom("R", ("A", "B")), Atom("S", ("B", "C")), Atom("T", ("C", "A")))
TRIANGLE_SCHEMA = _schema([("R", [("A", "string"), ("B", "string")]), ("S", [("B", "string"), ("C", "string")]),
                           ("T", [("C", "string"), ("A", "string")])])
# a1-b1-c1 closes; b2/c2 and a2 dangle
TRIANGLE_DB = {
    "R": [("a1", "b1"), ("a1", "b2"), ("a2", "b1")],
    "S": [("b1", "c1"), ("b2", "c2")],
    "T": [("c1", "a1"), ("c2", "a3")],
}


FORK_SCHEMA = _schema([("R", [("A", "int"), ("X", "int")]), ("S", [("A", "int"), ("B", "int")]),
                       ("T", [("B", "int"), ("Y", "int")]), ("V", [("B", "int"), ("Z", "int")])])
FORK_QUERY = "Q(A, X, B, Y, Z) :- R(A, X), S(A, B), T(B, Y), V(B, Z)."


def fork_tree():
    """R at the root, S below it, T and V below S."""
    from tagjoin.hypergraph import Bag, JoinTree
    return JoinTree([Bag(frozenset("AX"), (0,), [1]), Bag(frozenset("AB"), (1,), [2, 3]),
                     Bag(frozenset("BY"), (2,), []), Bag(frozenset("BZ"), (3,), [])], 0)


@pytest.fixture
def i1():
    return I1_SCHEMA, I1_DB, build_tag(I1_SCHEMA, I1_DB)


@pytest.fixture
def triangle_tag():
    return TRIANGLE_SCHEMA, TRIANGLE_DB, build_tag(TRIANGLE_SCHEMA, TRIANGLE_DB)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
