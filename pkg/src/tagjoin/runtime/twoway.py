"""Joins between two relations driven from their shared attribute vertices.

The coordinator (first join variable) attribute vertices start the run. With
one join variable the flow is signal, data, output: three supersteps. With
companion variables the tuples first report their companion values, the
coordinator intersects the two sides, and only matching tuples send data.
Staged mode reports one companion per round.

Semi, anti and outer joins reuse the same program; tuples with a null
coordinator have no edge and are handled at superstep 0 when their side is
preserved.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..bsp import AnchoredId, ValueSet, VertexProgram, run_program
from ..errors import UnknownAttribute, UnsupportedQuery
from ..relalg import compile_filter, value_filter
from ..table import Table
from .common import JoinResult, attr_type, relation_columns

KINDS = ("inner", "left", "right", "full", "semi", "anti")


@dataclass(frozen=True)
class Side:
    relation: str
    vars: tuple[str, ...]


class _Binary:
    def __init__(self, graph, left: Side, right: Side, on, kind, staged, filters):
        if kind not in KINDS:
            raise ValueError(f"unknown join kind {kind!r}")
        if not on:
            raise UnknownAttribute("binary join needs at least one join variable")
        self.graph, self.kind, self.staged = graph, kind, staged
        self.sides = (left, right)
        self.on = tuple(on)
        self.coord = on[0]
        self.labels = []
        self.keypos = []
        self.coordpos = []
        for side in self.sides:
            for v in on:
                if v not in side.vars:
                    raise UnknownAttribute(f"{side.relation} does not bind join variable {v}")
            cols = relation_columns(graph, side.relation)
            col = cols[side.vars.index(self.coord)]
            if attr_type(graph, side.relation, col) is None:
                raise UnsupportedQuery(f"cannot join on unmaterialized attribute {side.relation}.{col}")
            self.labels.append(f"{side.relation}.{col}")
            self.keypos.append(tuple(side.vars.index(v) for v in on[1:]))
            self.coordpos.append(side.vars.index(self.coord))
        lv, rv = left.vars, right.vars
        if set(lv) & set(rv) != set(on):
            raise UnsupportedQuery(f"join variables {list(on)} must be exactly the shared variables")
        self.l_cols = tuple(dict.fromkeys(lv))
        self.l_pos = tuple(lv.index(c) for c in self.l_cols)
        self.l_keypos = tuple(self.l_cols.index(v) for v in on[1:])
        self.r_extra = tuple(c for c in dict.fromkeys(rv) if c not in self.l_cols)
        self.r_extra_pos = tuple(rv.index(c) for c in self.r_extra)
        self.output = self.l_cols if kind in ("semi", "anti") else self.l_cols + self.r_extra
        # right-only rows in outer joins: left columns shared with the right side are coalesced
        self.r_fill = tuple(rv.index(c) if c in rv else None for c in self.l_cols)
        # tuple-local filters are safe to push only when neither side can be null-padded
        self.tuple_pred = [None, None]
        self.out_filters = []
        self.coord_pred = None
        padded = kind in ("left", "right", "full")
        for f in filters:
            if not set(f.vars) <= set(self.output):
                raise UnsupportedQuery(f"filter {f} references variables hidden by a {kind} join")
        if padded:
            self.out_filters = [compile_filter(f, self.output) for f in filters]
        else:
            late = []
            for f in filters:
                homes = [i for i, s in enumerate(self.sides) if set(f.vars) <= set(s.vars)]
                if kind in ("semi", "anti"):
                    homes = [i for i in homes if i == 0]
                if homes:
                    i = homes[0]
                    prev = self.tuple_pred[i]
                    pred = compile_filter(f, self.sides[i].vars)
                    self.tuple_pred[i] = pred if prev is None else (lambda r, a=prev, b=pred: a(r) and b(r))
                else:
                    late.append(f)
            self.out_filters = [compile_filter(f, self.output) for f in late]
            self.coord_pred = value_filter(filters, self.coord)
        self.side_of = {}
        for i, s in enumerate(self.sides):
            for v in graph.rel_tuples.get(s.relation, ()):
                self.side_of[v] = i
        if left.relation == right.relation:
            raise UnsupportedQuery("self-joins need an aliased copy of the relation")

    def key(self, i, row):
        return tuple(row[j] for j in self.keypos[i])

    def initial(self):
        """Coordinator vertices that start, plus preserved tuples lacking a coordinator edge."""
        adj = self.graph.adj
        have = [set(), set()]
        orphans = []
        for i, s in enumerate(self.sides):
            label = self.labels[i]
            for v in self.graph.rel_tuples.get(s.relation, ()):
                peers = adj[v].get(label)
                if peers:
                    have[i].add(peers[0])
                elif self._preserved(i):
                    orphans.append(v)
        kind = self.kind
        if kind in ("inner", "semi"):
            start = have[0] & have[1]
        elif kind in ("left", "anti"):
            start = have[0]
        elif kind == "right":
            start = have[1]
        else:
            start = have[0] | have[1]
        return sorted(start) + orphans

    def _preserved(self, i):
        return (self.kind in ("left", "full", "anti") and i == 0) or (self.kind in ("right", "full") and i == 1)

    def rows_for(self, i, row):
        if i == 0:
            return tuple(row[j] for j in self.l_pos)
        return tuple(row[j] for j in self.r_extra_pos)

    def padded(self, i, row):
        if i == 0:
            return tuple(row[j] for j in self.l_pos) + (None,) * len(self.r_extra)
        left = tuple(None if j is None else row[j] for j in self.r_fill)
        return left + tuple(row[j] for j in self.r_extra_pos)

    def passes(self, row):
        return all(f(row) for f in self.out_filters)


class BinaryProgram(VertexProgram):
    """Superstep layout, with ``n`` key-report stages (0 without companions):

    * ``0``            coordinators signal; preserved tuples without a coordinator edge output
    * ``1, 3, ..``     tuples report companion values
    * ``2, 4, ..``     coordinators intersect and signal the tuples that still match
    * ``2n+1``         tuples send data (semi and anti: matching left tuples output themselves)
    * ``2n+2``         coordinators emit joined rows
    """

    accepts = (int, AnchoredId, ValueSet, Table)

    def __init__(self, job: _Binary):
        self.job = job
        self.plan_edges = 2
        self.uses_keys = len(job.on) > 1 and job.kind in ("inner", "semi", "anti")
        if not self.uses_keys:
            self.stages = 0
        elif job.staged and job.kind == "inner":
            self.stages = len(job.on) - 1
        else:
            self.stages = 1
        self.data_step = 2 * self.stages + 1

    def compute_chunk(self, ctx, items):
        s = ctx.superstep
        if s == 0:
            self._start(ctx, items)
        elif s < self.data_step:
            if s % 2:
                self._report_keys(ctx, items, (s - 1) // 2)
            else:
                self._intersect(ctx, items, (s - 2) // 2)
        elif s == self.data_step:
            self._send_data(ctx, items)
        else:
            self._combine(ctx, items)

    def _start(self, ctx, items):
        job = self.job
        graph = ctx.graph
        out = ctx.outbox
        for v, _ in items:
            if graph.rel_of[v] is not None:
                i = job.side_of[v]
                row = graph.data[v]
                if job.kind == "anti":
                    if self._tuple_ok(0, row):
                        self._emit(ctx, v, [job.rows_for(0, row)])
                else:
                    r = job.padded(i, row)
                    if job.passes(r):
                        self._emit(ctx, v, [r])
                continue
            if job.coord_pred is not None and not job.coord_pred(graph.attr_key[v][1]):
                continue
            adj = graph.adj[v]
            l_peers = adj.get(job.labels[0], ())
            r_peers = adj.get(job.labels[1], ())
            if not self.uses_keys and job.kind == "semi":
                targets = l_peers
            elif not self.uses_keys and job.kind == "anti":
                targets = () if r_peers else l_peers
            else:
                targets = list(l_peers) + list(r_peers)
            for t in targets:
                out.append((t, v, v))

    def _tuple_ok(self, i, row):
        pred = self.job.tuple_pred[i]
        return pred is None or pred(row)

    def _report_keys(self, ctx, items, stage):
        job = self.job
        data = ctx.graph.data
        for v, msgs in items:
            i = job.side_of[v]
            row = data[v]
            if not self._tuple_ok(i, row):
                continue
            if self.stages > 1:
                key = (row[job.keypos[i][stage]],)
            else:
                key = job.key(i, row)
            if None in key:
                if job.kind == "anti" and i == 0:
                    self._emit(ctx, v, [job.rows_for(0, row)])
                continue
            ctx.send(v, msgs[0][0], AnchoredId(key, v))

    def _intersect(self, ctx, items, stage):
        job = self.job
        side_of = job.side_of
        kind = job.kind
        for v, msgs in items:
            prefix = ctx.state(v).extra.setdefault("prefix", {})
            left, right = [], []
            for src, p in msgs:
                full = prefix.get(src, ()) + p.anchor
                prefix[src] = full
                (left if side_of[src] == 0 else right).append((src, full))
            r_keys = {k for _, k in right}
            if kind == "inner":
                both = {k for _, k in left} & r_keys
                targets = [t for t, k in left + right if k in both]
            elif kind == "semi":
                targets = [t for t, k in left if k in r_keys]
            else:
                targets = [t for t, k in left if k not in r_keys]
            ctx.charge(len(msgs))
            if targets:
                payload = ValueSet(frozenset())
                ctx.outbox.extend((t, v, payload) for t in sorted(targets))

    def _send_data(self, ctx, items):
        job = self.job
        data = ctx.graph.data
        for v, msgs in items:
            i = job.side_of[v]
            row = data[v]
            if not self._tuple_ok(i, row):
                continue
            if job.kind in ("semi", "anti"):
                self._emit(ctx, v, [job.rows_for(0, row)])
                continue
            payload = Table(job.l_cols if i == 0 else job.sides[1].vars,
                            [job.rows_for(0, row) if i == 0 else row])
            ctx.send(v, msgs[0][0], payload)

    def _combine(self, ctx, items):
        job = self.job
        kind = job.kind
        side_of = job.side_of
        lk, rk = job.l_keypos, job.keypos[1]
        extra = job.r_extra_pos
        for v, msgs in items:
            left: dict = {}
            right: dict = {}
            for src, t in msgs:
                r = t.rows[0]
                if side_of[src] == 0:
                    left.setdefault(tuple(r[j] for j in lk), []).append(r)
                else:
                    right.setdefault(tuple(r[j] for j in rk), []).append(r)
            rows = []
            for key, lrows in left.items():
                rrows = right.get(key) if None not in key else None
                if rrows:
                    for r in rrows:
                        tail = tuple(r[j] for j in extra)
                        rows.extend(lr + tail for lr in lrows)
                elif kind in ("left", "full"):
                    rows.extend(lr + (None,) * len(extra) for lr in lrows)
            if kind in ("right", "full"):
                for key, rrows in right.items():
                    if None in key or key not in left:
                        rows.extend(job.padded(1, r) for r in rrows)
            if job.out_filters:
                rows = [r for r in rows if job.passes(r)]
            ctx.charge(len(msgs) + len(rows))
            if rows:
                self._emit(ctx, v, rows)

    def _emit(self, ctx, v, rows):
        st = ctx.state(v)
        if st.output is None:
            st.output = Table(self.job.output, list(rows))
        else:
            st.output.rows.extend(rows)


def binary_join(graph, left: Side, right: Side, on, kind="inner", staged=False, filters=(),
                workers=1, distributed=False) -> JoinResult:
    job = _Binary(graph, left, right, on, kind, staged, filters)
    program = BinaryProgram(job)
    states, report = run_program(graph, program, job.initial(), max_supersteps=2 * program.data_step + 8,
                                 workers=workers)
    pieces, rows = {}, []
    for v in sorted(states):
        out = states[v].output
        if out is not None:
            pieces[v] = out
            rows.extend(out.rows)
    report.OUT = len(rows)
    report.IN = sum(len(graph.rel_tuples.get(s.relation, ())) for s in job.sides)
    if distributed:
        return JoinResult(Table(job.output, []), report, None, pieces)
    return JoinResult(Table(job.output, rows), report)


def _sides_by_name(graph, R, S, attrs):
    """Sides whose variables are the attribute names; clashing non-join names on S get a prefix."""
    rc = relation_columns(graph, R)
    sc = relation_columns(graph, S)
    for a in attrs:
        if a not in rc or a not in sc:
            raise UnknownAttribute(f"{R} and {S} do not both have attribute {a!r}")
    s_vars = tuple(c if (c in attrs or c not in rc) else f"{S}.{c}" for c in sc)
    return Side(R, rc), Side(S, s_vars)


def two_way_join(graph, R, S, join_attr, filters=(), workers=1, distributed=False) -> JoinResult:
    left, right = _sides_by_name(graph, R, S, [join_attr])
    return binary_join(graph, left, right, (join_attr,), "inner", False, filters, workers, distributed)


def multi_attr_join(graph, R, S, attrs, staged=False, filters=(), workers=1) -> JoinResult:
    if len(attrs) < 2:
        raise UnknownAttribute("multi-attribute join needs at least two attributes")
    left, right = _sides_by_name(graph, R, S, list(attrs))
    return binary_join(graph, left, right, tuple(attrs), "inner", staged, filters, workers)


def outer_join(graph, R, S, attr, kind, filters=(), workers=1) -> JoinResult:
    if kind not in ("left", "right", "full"):
        raise ValueError(f"outer join kind must be left, right or full, not {kind!r}")
    left, right = _sides_by_name(graph, R, S, [attr])
    return binary_join(graph, left, right, (attr,), kind, False, filters, workers)


def semi_join(graph, R, S, attr, filters=(), workers=1) -> JoinResult:
    left, right = _sides_by_name(graph, R, S, [attr])
    return binary_join(graph, left, right, (attr,), "semi", False, filters, workers)


def anti_join(graph, R, S, attr, filters=(), workers=1) -> JoinResult:
    left, right = _sides_by_name(graph, R, S, [attr])
    return binary_join(graph, left, right, (attr,), "anti", False, filters, workers)
