"""Barrier-synchronized superstep engine.

A vertex is active in superstep i+1 iff it received at least one message in
superstep i. Active vertices are split into contiguous chunks, one per
worker, run in order in the calling thread; chunk outboxes are concatenated in chunk order at the barrier
and every incoming queue is sorted by (sender, canonical payload bytes), so
the outcome does not depend on the number of workers.
"""
from __future__ import annotations

import gc
import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from operator import itemgetter
from typing import Any, Callable, Iterable

from .errors import (
    MaxSuperstepsExceeded,
    NonCommutativeCombine,
    PayloadTypeMismatch,
    UnknownTarget,
)
from .table import Table, row_key

AGGREGATOR_BASE = 1 << 63
GLOBAL_AGGREGATOR = AGGREGATOR_BASE


# Payload variants. A bare int is a VertexId payload.

@dataclass(frozen=True, slots=True)
class AnchoredId:
    anchor: Any
    sender: int


@dataclass(frozen=True, slots=True)
class ValueSet:
    values: frozenset


@dataclass(frozen=True, slots=True)
class Scalar:
    value: Any


class _WakeUp:
    __slots__ = ()

    def __repr__(self):
        return "WakeUp"


WakeUp = _WakeUp()

PAYLOAD_TYPES = (int, AnchoredId, ValueSet, Table, _WakeUp, Scalar)


def payload_units(p) -> int:
    t = type(p)
    if t is int or t is _WakeUp or t is Scalar:
        return 1
    if t is AnchoredId:
        return 2
    if t is ValueSet:
        return len(p.values)
    if t is Table:
        return len(p.cols) * len(p.rows)
    raise PayloadTypeMismatch(f"unsupported payload {t.__name__}")


def canonical_bytes(p) -> bytes:
    t = type(p)
    if t is int:
        body = str(p)
    elif t is AnchoredId:
        body = repr((p.anchor, p.sender))
    elif t is ValueSet:
        body = repr(sorted(p.values, key=repr))
    elif t is Table:
        body = repr((p.cols, p.tag, sorted(p.rows, key=row_key)))
    elif t is Scalar:
        body = repr(p.value)
    else:
        body = ""
    return f"{t.__name__}:{body}".encode()


@dataclass
class SuperstepCounters:
    i: int
    msgs: int = 0
    payload: int = 0
    compute: int = 0
    active: int = 0

    def as_dict(self) -> dict:
        return {"i": self.i, "msgs": self.msgs, "payload": self.payload,
                "compute": self.compute, "active": self.active}


@dataclass
class CostReport:
    per_superstep: list[SuperstepCounters] = field(default_factory=list)
    IN: int = 0
    OUT: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def totals(self) -> dict:
        return {k: sum(getattr(c, k) for c in self.per_superstep)
                for k in ("msgs", "payload", "compute", "active")}

    @property
    def supersteps(self) -> int:
        return len(self.per_superstep)

    def extend(self, other: "CostReport") -> "CostReport":
        base = len(self.per_superstep)
        for c in other.per_superstep:
            self.per_superstep.append(
                SuperstepCounters(base + c.i, c.msgs, c.payload, c.compute, c.active))
        self.notes.extend(other.notes)
        return self

    def to_dict(self) -> dict:
        doc = {"supersteps": [c.as_dict() for c in self.per_superstep],
               "totals": self.totals, "IN": self.IN, "OUT": self.OUT}
        if self.notes:
            doc["notes"] = list(self.notes)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False)


@dataclass
class Aggregator:
    combine: Callable[[Any, Any], Any]
    identity: Any

    def fold(self, values) -> Any:
        acc = self.identity
        for v in values:
            acc = self.combine(acc, v)
        return acc

    def verify(self, samples) -> None:
        """Raise NonCommutativeCombine if combine is not commutative and associative on samples."""
        samples = list(samples)
        for a in samples:
            for b in samples:
                if self.combine(a, b) != self.combine(b, a):
                    raise NonCommutativeCombine(f"combine({a!r}, {b!r}) depends on order")
                for c in samples:
                    if self.combine(self.combine(a, b), c) != self.combine(a, self.combine(b, c)):
                        raise NonCommutativeCombine(f"combine is not associative on {a!r}, {b!r}, {c!r}")


def sum_aggregator() -> Aggregator:
    return Aggregator(lambda a, b: a + b, 0)


class KeyedAggregator(Aggregator):
    """Accumulates (key, partial) pairs or dicts into one dict, combining per key."""

    def __init__(self, combine):
        self.per_key = combine
        super().__init__(self._merge, {})

    def _merge(self, acc, item):
        out = dict(acc)
        self._add(out, item)
        return out

    def _add(self, out, item):
        pairs = item.items() if isinstance(item, dict) else [item]
        combine = self.per_key
        for k, v in pairs:
            out[k] = combine(out[k], v) if k in out else v

    def fold(self, values):
        out = {}
        for v in values:
            self._add(out, v)
        return out


def keyed_aggregator(combine: Callable[[Any, Any], Any]) -> KeyedAggregator:
    return KeyedAggregator(combine)


class VertexState:
    __slots__ = ("marked", "value", "heavy", "output", "extra")

    def __init__(self):
        self.marked: dict = {}
        self.value = None
        self.heavy = None
        self.output = None
        self.extra: dict = {}

    def __eq__(self, other):
        return isinstance(other, VertexState) and all(
            getattr(self, k) == getattr(other, k) for k in self.__slots__)

    def __repr__(self):
        return (f"VertexState(marked={self.marked!r}, value={self.value!r}, "
                f"heavy={self.heavy!r}, output={self.output!r})")


class VertexProgram:
    """Subclasses implement ``compute``; ``master`` runs the aggregator vertex.

    ``accepts`` lists the payload types the program can consume (None means
    any). ``aggregators`` maps names to Aggregator instances.
    """

    accepts: tuple | None = None
    aggregators: dict[str, Aggregator] = {}
    has_master = False
    plan_edges = 0

    def compute(self, ctx: "Context", v: int, msgs: list) -> None:
        raise NotImplementedError

    def compute_chunk(self, ctx: "Context", items: list) -> None:
        compute = self.compute
        for v, msgs in items:
            compute(ctx, v, msgs)

    def master(self, ctx: "Context", queues: dict) -> None:
        pass


class Context:
    """Per-worker view of one superstep."""

    __slots__ = ("superstep", "graph", "states", "outbox", "accum", "charged",
                 "previous", "program")

    def __init__(self, superstep, graph, states, previous, program):
        self.superstep = superstep
        self.graph = graph
        self.states = states
        self.previous = previous
        self.program = program
        self.outbox: list = []
        self.accum: list = []
        self.charged = 0

    def send(self, src: int, dst: int, payload) -> None:
        self.outbox.append((dst, src, payload))

    def send_many(self, src: int, dsts: Iterable[int], payload) -> None:
        self.outbox.extend([(d, src, payload) for d in dsts])

    def charge(self, units: int) -> None:
        self.charged += units

    def state(self, v: int) -> VertexState:
        st = self.states.get(v)
        if st is None:
            st = self.states[v] = VertexState()
        return st

    def aggregate(self, name: str, value, src: int) -> None:
        self.accum.append((src, name, value))

    def read_previous(self, name: str):
        return self.previous[name]

    def aggregator(self, name: str, src: int) -> "AggregatorHandle":
        return AggregatorHandle(self, name, src)


class AggregatorHandle:
    __slots__ = ("ctx", "name", "src")

    def __init__(self, ctx, name, src):
        self.ctx, self.name, self.src = ctx, name, src

    def accumulate(self, value) -> None:
        self.ctx.aggregate(self.name, value, self.src)

    def read_previous(self):
        return self.ctx.read_previous(self.name)


def _resolve_initial(graph, initial_active) -> list[int]:
    if initial_active is None:
        return []
    if callable(initial_active):
        return [v for v in range(graph.n_vertices) if initial_active(v, graph)]
    return sorted(set(initial_active))


def _chunks(items: list, n: int) -> list[list]:
    if n <= 1 or len(items) < 2:
        return [items]
    size = -(-len(items) // n)
    return [items[i:i + size] for i in range(0, len(items), size)]


@contextmanager
def _gc_paused():
    # message payloads are acyclic; generational collection only burns time on them
    was = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()


def run_program(graph, program: VertexProgram, initial_active, max_supersteps: int | None = None,
                workers: int = 1, states: dict | None = None):
    """Execute ``program`` until no messages are sent. Returns (states, CostReport)."""
    with _gc_paused():
        return _run(graph, program, initial_active, max_supersteps, workers, states)


def _run(graph, program, initial_active, max_supersteps, workers, states):
    if max_supersteps is None:
        max_supersteps = 4 * program.plan_edges + 8
    if max_supersteps <= 0:
        raise ValueError("max_supersteps must be positive")
    states = {} if states is None else states
    report = CostReport()
    previous = {name: agg.identity for name, agg in program.aggregators.items()}
    accepts = None if program.accepts is None else set(program.accepts)
    n_vertices = graph.n_vertices
    queues = {v: [] for v in _resolve_initial(graph, initial_active)}
    agg_queues: dict = {}
    pending_accum = False
    s = 0
    while queues or agg_queues or pending_accum or (s == 0 and program.has_master):
        if s >= max_supersteps:
            raise MaxSuperstepsExceeded(
                f"program still sending after {max_supersteps} supersteps")
        counters = SuperstepCounters(s, active=len(queues))
        items = sorted(queues.items(), key=itemgetter(0))
        processed = sum(map(len, queues.values()))
        ctxs = []
        if program.has_master:
            mctx = Context(s, graph, states, previous, program)
            program.master(mctx, agg_queues)
            processed += sum(len(q) for q in agg_queues.values())
            ctxs.append(mctx)
        chunks = _chunks(items, workers)
        wctxs = [Context(s, graph, states, previous, program) for _ in chunks]
        # chunks are independent within a superstep; CPython threads would not overlap them
        for c, chunk in zip(wctxs, chunks):
            program.compute_chunk(c, chunk)
        ctxs.extend(wctxs)

        outbox = []
        accum = []
        charged = 0
        for c in ctxs:
            outbox.extend(c.outbox)
            accum.extend(c.accum)
            charged += c.charged
        counters.msgs = len(outbox) + len(accum)
        counters.compute = processed + charged
        queues, agg_queues, units = _deliver(outbox, n_vertices, accepts)
        counters.payload = units + sum(payload_units(v) for _, _, v in accum)
        if accum:
            by_name: dict = {}
            for src, name, value in accum:
                by_name.setdefault(name, []).append(value)
            previous = {name: agg.identity for name, agg in program.aggregators.items()}
            for name, values in by_name.items():
                previous[name] = program.aggregators[name].fold(values)
        elif pending_accum:
            previous = {name: agg.identity for name, agg in program.aggregators.items()}
        pending_accum = bool(accum)
        report.per_superstep.append(counters)
        s += 1
    return states, report


def _deliver(outbox, n_vertices, accepts):
    queues: dict = {}
    agg_queues: dict = {}
    units = 0
    if not outbox:
        return queues, agg_queues, 0
    if accepts is not None:
        bad = set(map(type, map(itemgetter(2), outbox))) - accepts
        if bad:
            raise PayloadTypeMismatch(
                f"program cannot consume {sorted(t.__name__ for t in bad)}")
    get = queues.get
    unit = (int, _WakeUp, Scalar)
    for dst, src, p in outbox:
        tp = type(p)
        if tp is Table:
            units += len(p.cols) * len(p.rows)
        elif tp in unit:
            units += 1
        else:
            units += payload_units(p)
        q = get(dst)
        if q is None:
            if not 0 <= dst < n_vertices:
                if dst >= AGGREGATOR_BASE:
                    agg_queues.setdefault(dst, []).append((src, p))
                    continue
                raise UnknownTarget(f"vertex {dst} does not exist")
            queues[dst] = [(src, p)]
        else:
            q.append((src, p))
    first = itemgetter(0)
    for q in queues.values():
        if len(q) > 1:
            _canonical_sort(q, first)
    for q in agg_queues.values():
        _canonical_sort(q, first)
    return queues, agg_queues, units


def _canonical_sort(q: list, first) -> None:
    if len(set(map(first, q))) == len(q):
        q.sort(key=first)
    else:
        q.sort(key=lambda m: (m[0], canonical_bytes(m[1])))
