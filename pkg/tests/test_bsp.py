import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagjoin.bsp import (
    GLOBAL_AGGREGATOR,
    AnchoredId,
    Scalar,
    ValueSet,
    VertexProgram,
    WakeUp,
    keyed_aggregator,
    payload_units,
    run_program,
    sum_aggregator,
)
from tagjoin.errors import MaxSuperstepsExceeded, NonCommutativeCombine, PayloadTypeMismatch, UnknownTarget
from tagjoin.table import Table
from tagjoin.tag_store import Schema, build_tag


class _Ring:
    """Minimal graph stand-in: n vertices and nothing else."""

    def __init__(self, n):
        self.n_vertices = n


class Echo(VertexProgram):
    """Each vertex records the superstep of every receipt and forwards once to its successor."""

    def __init__(self, n, hops):
        self.n, self.hops = n, hops

    def compute(self, ctx, v, msgs):
        st = ctx.state(v)
        st.extra.setdefault("seen", []).extend((ctx.superstep, src) for src, _ in msgs)
        if ctx.superstep < self.hops:
            ctx.send(v, (v + 1) % self.n, v)


def test_empty_graph_terminates_at_superstep_zero():
    states, report = run_program(_Ring(0), Echo(0, 3), [], max_supersteps=5)
    assert states == {}
    assert report.supersteps == 0
    assert report.totals == {"msgs": 0, "payload": 0, "compute": 0, "active": 0}


def test_messages_visible_only_next_superstep():
    states, report = run_program(_Ring(4), Echo(4, 2), [0], max_supersteps=10)
    # 0 sends at s0, 1 receives at s1 and sends, 2 receives at s2 and stops
    assert states[1].extra["seen"] == [(1, 0)]
    assert states[2].extra["seen"] == [(2, 1)]
    assert [c.msgs for c in report.per_superstep] == [1, 1, 0]
    assert [c.active for c in report.per_superstep] == [1, 1, 1]


def test_activation_equals_distinct_recipients():
    class Fan(VertexProgram):
        def compute(self, ctx, v, msgs):
            if ctx.superstep == 0:
                for d in (1, 2, 2, 3):
                    ctx.send(v, d, WakeUp)

    _, report = run_program(_Ring(4), Fan(), [0], max_supersteps=5)
    assert report.per_superstep[0].msgs == 4
    assert report.per_superstep[1].active == 3


def test_max_supersteps_exceeded():
    with pytest.raises(MaxSuperstepsExceeded):
        run_program(_Ring(3), Echo(3, 100), [0], max_supersteps=5)
    with pytest.raises(ValueError):
        run_program(_Ring(3), Echo(3, 1), [0], max_supersteps=0)


def test_unknown_target():
    class Bad(VertexProgram):
        def compute(self, ctx, v, msgs):
            ctx.send(v, 99, 1)

    with pytest.raises(UnknownTarget):
        run_program(_Ring(2), Bad(), [0], max_supersteps=3)


def test_payload_type_mismatch():
    class IdsOnly(VertexProgram):
        accepts = (int,)

        def compute(self, ctx, v, msgs):
            if ctx.superstep == 0:
                ctx.send(v, 1, Scalar(3))

    with pytest.raises(PayloadTypeMismatch):
        run_program(_Ring(2), IdsOnly(), [0], max_supersteps=3)


def test_payload_units():
    assert payload_units(7) == 1
    assert payload_units(WakeUp) == 1
    assert payload_units(Scalar(2.5)) == 1
    assert payload_units(ValueSet(frozenset({1, 2, 3}))) == 3
    assert payload_units(Table(("A", "B"), [(1, 2), (3, 4), (5, 6)])) == 6
    assert payload_units(AnchoredId("x", 4)) == 2
    with pytest.raises(PayloadTypeMismatch):
        payload_units("nope")


def test_table_send_counts_cells():
    class Send(VertexProgram):
        def compute(self, ctx, v, msgs):
            if ctx.superstep == 0:
                ctx.send(v, 1, Table(("A", "B"), [(1, 2), (3, 4), (5, 6)]))

    _, report = run_program(_Ring(2), Send(), [0], max_supersteps=3)
    assert report.per_superstep[0].payload == 6
    assert report.per_superstep[0].msgs == 1


def test_sum_aggregator_reads_next_superstep():
    class Acc(VertexProgram):
        aggregators = {"total": sum_aggregator()}

        def compute(self, ctx, v, msgs):
            st = ctx.state(v)
            h = ctx.aggregator("total", v)
            if ctx.superstep == 0:
                st.extra["before"] = h.read_previous()
                h.accumulate({0: 3, 1: 5, 2: 7}[v])
                ctx.send(v, v, WakeUp)
            elif ctx.superstep == 1:
                st.value = h.read_previous()

    states, _ = run_program(_Ring(3), Acc(), [0, 1, 2], max_supersteps=4)
    assert [states[v].value for v in range(3)] == [15, 15, 15]
    assert states[0].extra["before"] == 0


def test_keyed_aggregator_groups():
    agg = keyed_aggregator(lambda a, b: a + b)
    pairs = [("fr", 3), ("de", 2), ("fr", 4)]
    assert agg.fold(pairs) == {"fr": 7, "de": 2}
    assert agg.fold([]) == {}


def test_non_commutative_combine_detected():
    from tagjoin.bsp import Aggregator
    with pytest.raises(NonCommutativeCombine):
        Aggregator(lambda a, b: a - b, 0).verify([1, 2, 3])
    sum_aggregator().verify([1, 2, 3])


def test_master_receives_global_aggregator_messages():
    class ToMaster(VertexProgram):
        has_master = True

        def __init__(self):
            self.got = None

        def compute(self, ctx, v, msgs):
            if ctx.superstep == 0:
                ctx.send(v, GLOBAL_AGGREGATOR, v)

        def master(self, ctx, queues):
            if ctx.superstep == 1:
                self.got = [p for _, p in queues.get(GLOBAL_AGGREGATOR, ())]

    prog = ToMaster()
    run_program(_Ring(3), prog, [2, 0, 1], max_supersteps=4)
    assert prog.got == [0, 1, 2]


def test_queues_sorted_by_sender_then_payload():
    class Many(VertexProgram):
        def compute(self, ctx, v, msgs):
            if ctx.superstep == 0:
                ctx.send(v, 0, Scalar(9 - v))
                ctx.send(v, 0, Scalar(v))
            else:
                ctx.state(v).value = [(s, p.value) for s, p in msgs]

    states, _ = run_program(_Ring(4), Many(), [3, 1, 2], max_supersteps=4)
    assert states[0].value == [(1, 1), (1, 8), (2, 2), (2, 7), (3, 3), (3, 6)]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=12), st.sampled_from([2, 3, 8]))
def test_worker_count_never_changes_states_or_report(rows, workers):
    schema = Schema.from_dict({"relations": [{"name": "R", "attrs": [{"name": "A", "type": "int"},
                                                                    {"name": "B", "type": "int"}]}]})
    g = build_tag(schema, {"R": rows})

    class Spread(VertexProgram):
        def compute(self, ctx, v, msgs):
            st = ctx.state(v)
            st.value = sorted(src for src, _ in msgs)
            if ctx.superstep < 2:
                for peers in ctx.graph.adj[v].values():
                    for p in peers:
                        ctx.send(v, p, v)

    initial = list(range(g.n_tuples))
    a = run_program(g, Spread(), initial, max_supersteps=6, workers=1)
    b = run_program(g, Spread(), initial, max_supersteps=6, workers=workers)
    assert a[0] == b[0]
    assert a[1].to_json() == b[1].to_json()


def test_report_json_shape():
    _, report = run_program(_Ring(4), Echo(4, 2), [0], max_supersteps=10)
    report.IN, report.OUT = 4, 1
    doc = json.loads(report.to_json())
    assert set(doc) == {"supersteps", "totals", "IN", "OUT"}
    assert doc["supersteps"][0] == {"i": 0, "msgs": 1, "payload": 1, "compute": 0, "active": 1}
    assert doc["totals"]["msgs"] == sum(s["msgs"] for s in doc["supersteps"])
