"""Cartesian products: centrally at the global aggregator, or spread over tuple vertices."""
from __future__ import annotations

from itertools import product

from ..bsp import GLOBAL_AGGREGATOR, ValueSet, VertexProgram, run_program
from ..errors import UnsupportedQuery
from ..table import Table
from .common import JoinResult, relation_columns


def _operands(graph, relations):
    """Normalise relation names or atoms to (relation, output columns)."""
    if len(relations) < 2:
        raise UnsupportedQuery("a product needs at least two relations")
    out = []
    for r in relations:
        if isinstance(r, str):
            out.append((r, tuple(f"{r}.{c}" for c in relation_columns(graph, r)), None))
        else:
            keep = r.distinct_vars()
            pos = tuple(r.vars.index(v) for v in keep)
            out.append((r.relation, tuple(keep), pos))
    names = [c for _, cols, _ in out for c in cols]
    if len(set(names)) != len(names):
        raise UnsupportedQuery("product operands must not share columns")
    if len({r for r, _, _ in out}) != len(out):
        raise UnsupportedQuery("product operands must be distinct relations")
    return out


def _row(graph, v, pos):
    row = graph.data[v]
    return row if pos is None else tuple(row[p] for p in pos)


class _CentralProduct(VertexProgram):
    has_master = True

    def __init__(self, ops):
        self.ops = ops
        self.slot = {rel: i for i, (rel, _, _) in enumerate(ops)}
        self.result: list[tuple] | None = None
        self.cols = tuple(c for _, cols, _ in ops for c in cols)

    def compute_chunk(self, ctx, items):
        for v, _ in items:
            rel, cols, pos = self.ops[self.slot[ctx.graph.rel_of[v]]]
            ctx.send(v, GLOBAL_AGGREGATOR, Table(cols, [_row(ctx.graph, v, pos)]))

    def master(self, ctx, queues):
        received = queues.get(GLOBAL_AGGREGATOR)
        if ctx.superstep == 0 or self.result is not None:
            return
        parts: list[list] = [[] for _ in self.ops]
        for src, t in sorted(received or (), key=lambda m: m[0]):
            parts[self.slot[ctx.graph.rel_of[src]]].extend(t.rows)
        rows = [sum(combo, ()) for combo in product(*parts)]
        ctx.charge(len(rows))
        self.result = rows


def cartesian_a(graph, relations, workers: int = 1, distributed: bool = False) -> JoinResult:
    """Every tuple vertex ships its row to the global aggregator, which forms the product."""
    ops = _operands(graph, relations)
    start = [v for rel, _, _ in ops for v in graph.rel_tuples.get(rel, ())]
    program = _CentralProduct(ops)
    _, report = run_program(graph, program, start, max_supersteps=4, workers=workers)
    rows = program.result or []
    report.IN = len(start)
    report.OUT = len(rows)
    table = Table(program.cols, rows)
    if distributed:
        return JoinResult(Table(program.cols, []), report, None, {GLOBAL_AGGREGATOR: table})
    return JoinResult(table, report)


class _SpreadProduct(VertexProgram):
    """Cascade of pairwise products; group i+1 forwards its rows to group i's holders.

    Superstep 0 sends every tuple id to the aggregator. Stage j (from 1) uses
    supersteps 2j-1 (aggregator sends holder ids), 2j (sources send rows) and
    2j+1 (targets combine, overlapping the next stage's id round).
    """
    has_master = True

    def __init__(self, ops):
        self.ops = ops
        self.slot = {rel: i for i, (rel, _, _) in enumerate(ops)}
        self.holders: dict[int, list[int]] = {}
        self.stages: list[list[tuple[int, int]]] = []
        self.empty = False
        self.final_group = 0

    def _plan(self):
        groups = list(range(len(self.ops)))
        while len(groups) > 1:
            pairs = [(groups[i], groups[i + 1]) for i in range(0, len(groups) - 1, 2)]
            self.stages.append(pairs)
            groups = [g for i, g in enumerate(groups) if i % 2 == 0]
        self.final_group = groups[0]

    def master(self, ctx, queues):
        s = ctx.superstep
        if s == 0:
            return
        if s == 1:
            for src, _ in sorted(queues.get(GLOBAL_AGGREGATOR, ())):
                self.holders.setdefault(self.slot[ctx.graph.rel_of[src]], []).append(src)
            if len(self.holders) < len(self.ops):
                self.empty = True
                return
            self._plan()
        if self.empty or s % 2 == 0:
            return
        j = (s + 1) // 2
        if j > len(self.stages):
            return
        for target, source in self.stages[j - 1]:
            ids = ValueSet(frozenset(self.holders[target]))
            ctx.send_many(GLOBAL_AGGREGATOR, self.holders[source], ids)

    def compute_chunk(self, ctx, items):
        s = ctx.superstep
        graph = ctx.graph
        if s == 0:
            for v, _ in items:
                rel, cols, pos = self.ops[self.slot[graph.rel_of[v]]]
                ctx.state(v).output = Table(cols, [_row(graph, v, pos)])
                ctx.send(v, GLOBAL_AGGREGATOR, v)
            return
        for v, msgs in items:
            st = ctx.state(v)
            mine = st.output
            ids = [p for src, p in msgs if src == GLOBAL_AGGREGATOR]
            tables = [p for _, p in sorted((m for m in msgs if m[0] != GLOBAL_AGGREGATOR), key=lambda m: m[0])]
            if tables:
                other = [r for t in tables for r in t.rows]
                rows = [a + b for a in mine.rows for b in other]
                ctx.charge(len(rows))
                st.output = mine = Table(mine.cols + tables[0].cols, rows)
            if ids:
                ctx.send_many(v, sorted(ids[0].values), mine)
                st.output = None


def cartesian_b(graph, relations, workers: int = 1, distributed: bool = False) -> JoinResult:
    """Distributed product; results end up at the tuple vertices of the first relation."""
    ops = _operands(graph, relations)
    start = [v for rel, _, _ in ops for v in graph.rel_tuples.get(rel, ())]
    program = _SpreadProduct(ops)
    max_steps = 2 * len(ops) + 8
    states, report = run_program(graph, program, start, max_supersteps=max_steps, workers=workers)
    cols = tuple(c for _, cs, _ in ops for c in cs)
    pieces: dict[int, Table] = {}
    if not program.empty:
        first = ops[program.final_group][0]
        for v in graph.rel_tuples.get(first, ()):
            out = states[v].output
            if out is not None and out.rows:
                pieces[v] = out
    rows = [r for v in sorted(pieces) for r in pieces[v].rows]
    report.IN = len(start)
    report.OUT = len(rows)
    if distributed:
        return JoinResult(Table(cols, []), report, None, pieces)
    return JoinResult(Table(cols, rows), report)
