from collections import Counter

from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TRIANGLE_DB, I1_DB, TRIANGLE_ATOMS
from tagjoin import gen, oracle
from tagjoin.hypergraph import FractionalEdgeCover, fractional_cover
from tagjoin.query import Atom, parse

rows2 = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=10)


def test_nl_join_i1():
    res = oracle.nl_join([Atom("R", ("A", "B")), Atom("S", ("B", "C"))], I1_DB)
    assert res.columns == ("A", "B", "C") and len(res.rows) == 9
    assert res.reduced(0) == {0, 1, 2} and res.reduced(1) == {0, 1, 2}


def test_nl_join_small_triangle():
    res = oracle.nl_join(TRIANGLE_ATOMS, TRIANGLE_DB)
    assert res.rows == [("a1", "b1", "c1")]
    assert res.provenance == [(0, 0, 0)]


@settings(max_examples=60, deadline=None)
@given(rows2, rows2)
def test_semi_and_anti_partition_the_left_side(left, right):
    semi = oracle.semi_rows(left, ("A", "B"), right, ("B", "C"))
    anti = oracle.semi_rows(left, ("A", "B"), right, ("B", "C"), anti=True)
    assert Counter(semi) + Counter(anti) == Counter(left)


@settings(max_examples=60, deadline=None)
@given(rows2, rows2)
def test_full_outer_contains_inner_and_both_sides(left, right):
    cols, rows = oracle.outer_rows((("A", "B"), left), (("B", "C"), right), "full")
    inner = oracle.nl_join([Atom("L", ("A", "B")), Atom("R", ("B", "C"))], {"L": left, "R": right}).rows
    assert Counter(inner) <= Counter(rows)
    assert len(rows) == len(inner) + len(oracle.semi_rows(left, ("A", "B"), right, ("B", "C"), True)) + len(
        oracle.semi_rows(right, ("B", "C"), left, ("A", "B"), True))


def test_nulls_never_join():
    res = oracle.nl_join([Atom("R", ("A", "B")), Atom("S", ("B", "C"))], {"R": [(1, None)], "S": [(None, 2)]})
    assert res.rows == []


def test_worst_triangle_hits_the_bound():
    inst = gen.worst_triangle(16)
    q = parse(inst.query, inst.schema)
    out = len(oracle.nl_join(q.atoms, inst.db).rows)
    assert out == 64
    cover = fractional_cover(q)
    assert oracle.check_agm(q, cover, inst.db, 64)
    assert not oracle.check_agm(q, cover, inst.db, 65)
    assert oracle.agm_squared(cover.weights, [16, 16, 16]) == 4096


def test_agm_with_integral_cover():
    q = parse("Q(A) :- R(A,B), S(B,C), T(C,D), U(D,A).")
    db = {"R": [(0, 0)] * 3, "S": [(0, 0)] * 5, "T": [(0, 0)] * 2, "U": [(0, 0)] * 7}
    assert oracle.check_agm(q, FractionalEdgeCover((1, 0, 1, 0)), db, 6)
    assert not oracle.check_agm(q, FractionalEdgeCover((1, 0, 1, 0)), db, 7)


def test_evaluate_aggregates_and_exists():
    q = parse("Q(A, COUNT(*)) :- R(A,B), EXISTS { S(B, C), C != 'c4' } GROUP BY A.")
    cols, rows = oracle.evaluate(q, I1_DB)
    assert cols == ("A", "COUNT(*)")
    # EXISTS keeps each R row once, it never multiplies
    assert sorted(rows) == [("a1", 1), ("a2", 1), ("a3", 1)]
    q = parse("Q(COUNT(*)) :- R(A,B), S(B,C), A = 'zz'.")
    assert oracle.evaluate(q, I1_DB)[1] == [(0,)]


def test_cover_helpers():
    tri = [{"A", "B"}, {"B", "C"}, {"C", "A"}]
    assert oracle.brute_force_cover(tri) == oracle.vertex_packing_bound(tri) == 1.5
    assert oracle.isqrt_exact(49) == 7 and oracle.isqrt_exact(50) is None
