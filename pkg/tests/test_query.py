import pytest

from tagjoin.errors import (
    QuerySyntaxError,
    UnboundVariable,
    UncorrelatedBlock,
    UnknownRelation,
)
from tagjoin.query import AggregateSpec, Atom, Filter, Var, parse


def test_two_way_join():
    q = parse("Q(A,C) :- R(A,B), S(B,C).")
    assert q.atoms == (Atom("R", ("A", "B")), Atom("S", ("B", "C")))
    assert q.head_vars == ("A", "C")
    assert set(q.atoms[0].vars) & set(q.atoms[1].vars) == {"B"}


def test_triangle():
    q = parse("Q(A) :- R(A,B), S(B,C), T(C,A).")
    assert [a.relation for a in q.atoms] == ["R", "S", "T"]
    assert q.variables == ("A", "B", "C")


def test_local_aggregate():
    q = parse("Q(N, SUM(P)) :- O(K, N, P), L(K, X) GROUP BY N LOCAL.")
    assert q.aggregate == AggregateSpec("SUM", "P", ("N",), "local", False)
    assert q.output_columns == ("N", "SUM(P)")


@pytest.mark.parametrize("text,kind", [
    ("Q(COUNT(*)) :- R(A,B).", "scalar"),
    ("Q(A, MIN(B)) :- R(A,B) GROUP BY A.", "global"),
    ("Q(A, AVG(B)) :- R(A,B) GROUP BY A GLOBAL EAGER.", "global"),
])
def test_aggregate_kinds(text, kind):
    assert parse(text).aggregate.kind == kind


def test_filters():
    q = parse("Q(A) :- R(A,B), A < B, A IN (1, 2), B BETWEEN 0 AND 9, A != 'x', B >= 1.5.")
    assert q.filters == (Filter("<", "A", Var("B")), Filter("in", "A", (1, 2)), Filter("range", "B", (0, 9)),
                         Filter("!=", "A", "x"), Filter(">=", "B", 1.5))
    assert q.filters[0].vars == ("A", "B")


def test_join_prefixes_and_exists():
    q = parse("Q(A, C) :- R(A,B), LEFT S(B,C), ANTI T(A,D), NOT EXISTS { U(B, E), E > 3 }.")
    assert [a.join_kind for a in q.atoms] == ["inner", "left", "anti"]
    (block,) = q.exists
    assert block.negated and block.correlation == ("B",)
    assert block.filters == (Filter(">", "E", 3),)


def test_anonymous_variables_are_fresh():
    q = parse("Q(A) :- R(A,_), S(A,_).")
    assert q.atoms[0].vars[1] != q.atoms[1].vars[1]


def test_syntax_error_position():
    with pytest.raises(QuerySyntaxError) as exc:
        parse("Q(A) :-\n  R(A,B) S(B).")
    assert (exc.value.line, exc.value.column) == (2, 10)


@pytest.mark.parametrize("text", [
    "Q(A) :- .",
    "Q(A) R(A).",
    "Q(A) :- R(A)",
    "Q(A, SUM(B), MAX(B)) :- R(A,B) GROUP BY A.",
    "Q(A) :- R(A,B) GROUP BY A.",
    "Q(B, SUM(A)) :- R(A,B).",
    "Q(SUM(A)) :- R(A,B) GROUP BY B SCALAR.",
])
def test_malformed(text):
    with pytest.raises(QuerySyntaxError):
        parse(text)


def test_schema_checks(i1):
    schema = i1[0]
    with pytest.raises(UnknownRelation):
        parse("Q(A) :- X(A,B).", schema)
    with pytest.raises(QuerySyntaxError):
        parse("Q(A) :- R(A).", schema)
    with pytest.raises(UnboundVariable):
        parse("Q(Z) :- R(A,B).", schema)
    with pytest.raises(UnboundVariable):
        parse("Q(A) :- R(A,B), Z < 3.", schema)
    with pytest.raises(UnboundVariable):
        parse("Q(C) :- R(A,B), SEMI S(B,C).", schema)
    with pytest.raises(UncorrelatedBlock):
        parse("Q(A) :- R(A,B), EXISTS { S(X,Y) }.", schema)
