"""Multi-way acyclic joins: edge-marking semijoin reduction, then collection.

Superstep layout for a step list of length k:

* ``0 .. k-1``     reduction UP along the steps,
* ``k .. 2k-1``    reduction DOWN along the reversed, flipped steps,
* ``2k .. 3k-1``   collection along the steps again,
* ``3k``           root tuple vertices hold the output,
* ``3k+1 ..``      aggregation rounds, when the query aggregates.

Marks are keyed by plan edge. A vertex that receives along plan edge ``e``
replaces its mark for ``e`` with the senders; every later traversal of ``e``
goes only to marked peers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from operator import itemgetter

from ..bsp import GLOBAL_AGGREGATOR, AnchoredId, Scalar, ValueSet, VertexProgram, run_program
from ..errors import PlanMismatch, UnknownVariable, UnsupportedQuery
from ..relalg import (
    PartialAggregator,
    combine_partial,
    compile_filter,
    finalize_rows,
    merge_partial_tables,
    partial_table,
    partials_of,
    value_filter,
    warn_demotion,
)
from ..table import Table
from .common import JoinResult, ReductionTrace, attr_type, relation_columns, row_index


@dataclass
class AggregationPlan:
    spec: object
    float_arg: bool
    output_columns: tuple[str, ...]
    group_label: str | None = None  # root-relation label of the first group variable, for local mode


def _projector(idx):
    """Row to tuple of the cells at ``idx``."""
    if not idx:
        return lambda r: ()
    if len(idx) == 1:
        i = idx[0]
        return lambda r: (r[i],)
    return itemgetter(*idx)


@dataclass
class _Point:
    """Collection state after visiting one plan node."""
    node: int
    join_cols: tuple = ()     # columns a relation node contributes (with hidden id)
    join_pos: tuple = ()      # positions of those columns in the tuple data; -1 means the vertex id
    filters: list = field(default_factory=list)
    pre_cols: tuple = ()
    post_cols: tuple = ()
    keep_idx: tuple | None = None


class _ScalarAggregator:
    identity = None

    def combine(self, acc, item):
        p = item.value
        return p if acc is None else combine_partial(acc, p)

    def fold(self, values):
        acc = None
        for v in values:
            acc = self.combine(acc, v)
        return acc


class AcyclicJob:
    """Everything the vertex program needs, compiled once on the controlling thread."""

    def __init__(self, graph, plan, steps, filters=(), output=None, aggregation=None, trace=False):
        self.graph = graph
        self.plan = plan
        self.steps = list(steps)
        self.k = len(self.steps)
        self.walk = self.steps + [s.reversed() for s in reversed(self.steps)]
        self.agg = aggregation
        self.trace = trace
        atoms = plan.atoms
        nodes = plan.nodes
        self.node_atom = {n.id: atoms[n.atom] for n in nodes if n.is_relation}
        for st in self.steps:
            self._check_label(st.label)

        all_vars = tuple(dict.fromkeys(v for a in self.node_atom.values() for v in a.vars))
        if aggregation is not None:
            spec = aggregation.spec
            self.output = tuple(spec.group_by) + ((spec.arg,) if spec.arg else ())
        else:
            self.output = tuple(all_vars if output is None else output)
        for v in self.output:
            if v not in all_vars:
                raise UnknownVariable(f"output variable {v!r} is not bound by the plan's atoms")

        # filters: single-atom ones run at tuple vertices, the rest during collection
        self.local_pred = {}
        late = []
        for f in filters:
            homes = [n for n, a in self.node_atom.items() if set(f.vars) <= set(a.vars)]
            if homes:
                for n in homes:
                    self.local_pred.setdefault(n, []).append(compile_filter(f, self.node_atom[n].vars))
            else:
                late.append(f)
        for n, a in self.node_atom.items():
            seen = {}
            for i, v in enumerate(a.vars):
                if v in seen:
                    j = seen[v]
                    self.local_pred.setdefault(n, []).append(
                        lambda r, i=i, j=j: r[i] is not None and r[i] == r[j])
                else:
                    seen[v] = i
        self.local_pred = {n: _all(ps) for n, ps in self.local_pred.items()}
        self.value_pred = {n.id: value_filter(filters, n.var) for n in nodes if not n.is_relation}

        # per plan edge: label and the key positions (coordinator, companions) in the tuple data
        self.keypos = {}
        self.has_comp = {}
        for e in plan.edges:
            a = self.node_atom[e.rel_node]
            x = nodes[e.attr_node]
            self.keypos[e.id] = tuple(a.vars.index(c) for c in x.companions)
            self.has_comp[e.id] = bool(x.companions)
            col = relation_columns(graph, a.relation)[a.vars.index(x.var)]
            if attr_type(graph, a.relation, col) is None:
                raise UnsupportedQuery(f"cannot join on unmaterialized attribute {a.relation}.{col}")

        seen_edges = set()
        self.restricted = []
        for i, st in enumerate(self.walk):
            self.restricted.append(i >= self.k or st.edge in seen_edges)
            seen_edges.add(st.edge)

        self._compile_collection(late)
        self.row_index = row_index(graph, {a.relation for a in self.node_atom.values()}) if trace else {}

    def _check_label(self, label):
        rel, _, col = label.partition(".")
        if rel not in self.graph.rel_tuples:
            raise PlanMismatch(f"step label {label!r} names no relation in the graph")
        try:
            typ = attr_type(self.graph, rel, col)
        except Exception:
            typ = None
        if typ is None:
            raise PlanMismatch(f"step label {label!r} has no edges in the graph")

    def _compile_collection(self, late):
        k = self.k
        start = self.steps[0].src if k else self.plan.root
        order = [start] + [st.dst for st in self.steps]
        rel_visits = {}
        for j, n in enumerate(order):
            if n in self.node_atom:
                rel_visits.setdefault(n, []).append(j)
        hid = {n: f"#{self.node_atom[n].relation}@{n}" for n, js in rel_visits.items()
               if len(js) > 1}

        points = []
        cols: tuple = ()
        pending = list(late)
        for j, n in enumerate(order):
            pt = _Point(n)
            if n in self.node_atom:
                a = self.node_atom[n]
                jc, jp = [], []
                for i, v in enumerate(a.vars):
                    if v not in jc:
                        jc.append(v)
                        jp.append(i)
                if n in hid:
                    jc.append(hid[n])
                    jp.append(-1)
                pt.join_cols, pt.join_pos = tuple(jc), tuple(jp)
                cols = cols + tuple(c for c in jc if c not in cols)
            pt.pre_cols = cols
            now = [f for f in pending if set(f.vars) <= set(cols)]
            pending = [f for f in pending if f not in now]
            pt.filters = [compile_filter(f, cols) for f in now]
            need = set(self.output) | {v for f in pending for v in f.vars}
            for jj in range(j + 1, len(order)):
                m = order[jj]
                if m in self.node_atom:
                    need |= set(self.node_atom[m].vars)
                    if m in hid:
                        need.add(hid[m])
            if j == len(order) - 1:
                post = tuple(self.output)
            else:
                post = tuple(c for c in cols if c in need)
            pt.post_cols = post
            pt.keep_idx = None if post == cols else tuple(cols.index(c) for c in post)
            cols = post
            points.append(pt)
        if pending:
            raise UnknownVariable(f"filters {[str(f) for f in pending]} reference unbound variables")
        self.points = points
        self.start = start

    @property
    def max_supersteps(self) -> int:
        return max(4 * len(self.plan.edges) + 8, 3 * self.k + 8)


def _all(preds):
    if len(preds) == 1:
        return preds[0]
    return lambda r: all(p(r) for p in preds)


class AcyclicProgram(VertexProgram):
    accepts = (int, AnchoredId, ValueSet, Table, Scalar)

    def __init__(self, job: AcyclicJob):
        self.job = job
        self.plan_edges = len(job.plan.edges)
        self.trace_parts: list = []
        self.notes: list[str] = []
        self.global_partials: dict = {}
        agg = job.agg
        if agg is not None:
            self.has_master = True
            self.aggregators = {"groups": PartialAggregator(), "scalar": _ScalarAggregator()}
            self.scalar_partial = None
        else:
            self.aggregators = {}

    # -- dispatch ----------------------------------------------------------

    def compute_chunk(self, ctx, items):
        job = self.job
        s = ctx.superstep
        k = job.k
        if 1 <= s <= 2 * k:
            items = self._receive(ctx, items, s)
        if s < 2 * k:
            self._reduce_send(ctx, items, s)
        elif s <= 3 * k:
            self._collect(ctx, items, s - 2 * k)
        else:
            self._aggregate_round(ctx, items)

    def master(self, ctx, queues):
        agg = self.job.agg
        if agg is None:
            return
        if agg.spec.kind == "scalar":
            p = ctx.read_previous("scalar")
            if p is not None:
                self.scalar_partial = p if self.scalar_partial is None else combine_partial(self.scalar_partial, p)
        else:
            prev = ctx.read_previous("groups")
            for key, p in prev.items():
                g = self.global_partials
                g[key] = combine_partial(g[key], p) if key in g else p

    # -- reduction ---------------------------------------------------------

    def _receive(self, ctx, items, s):
        """Mark in-edges and keep the vertices that survive this step's semijoin."""
        job = self.job
        st_in = job.walk[s - 1]
        e = st_in.edge
        node = job.plan.nodes[st_in.dst]
        survivors = []
        state = ctx.state
        if node.is_relation:
            data = ctx.graph.data
            pred = job.local_pred.get(node.id)
            kp = job.keypos[e]
            comp = job.has_comp[e]
            for v, msgs in items:
                sender, p = msgs[0]
                row = data[v]
                if comp and tuple(row[i] for i in kp) not in p.values:
                    continue
                if pred is not None and not pred(row):
                    continue
                state(v).marked[e] = sender
                survivors.append((v, msgs))
            if job.trace:
                rel = job.node_atom[node.id].relation
                ri = job.row_index
                self.trace_parts.append((s, rel, "relation", [ri[v] for v, _ in survivors]))
        else:
            pred = job.value_pred.get(node.id)
            comp = job.has_comp[e]
            keys_seen = []
            attr_key = ctx.graph.attr_key
            for v, msgs in items:
                value = attr_key[v][1]
                if pred is not None and not pred(value):
                    continue
                if comp:
                    marks = {src: p.anchor for src, p in msgs}
                    keys = frozenset(marks.values())
                    state(v).marked[e] = marks
                    state(v).value = keys
                    if job.trace:
                        keys_seen.extend((value,) + key for key in keys)
                else:
                    state(v).marked[e] = [src for src, _ in msgs]
                    if job.trace:
                        keys_seen.append((value,))
                survivors.append((v, msgs))
            if job.trace:
                self.trace_parts.append((s, node.var, "attribute", keys_seen))
        return survivors

    def _reduce_send(self, ctx, items, s):
        job = self.job
        st = job.walk[s]
        e, label = st.edge, st.label
        restricted = job.restricted[s]
        node = job.plan.nodes[st.src]
        adj = ctx.graph.adj
        out = ctx.outbox
        comp = job.has_comp[e]
        if node.is_relation:
            data = ctx.graph.data
            kp = job.keypos[e]
            if s == 0:
                pred = job.local_pred.get(node.id)
                kept = []
                for v, msgs in items:
                    if pred is None or pred(data[v]):
                        kept.append((v, msgs))
                items = kept
                if job.trace:
                    ri = job.row_index
                    self.trace_parts.append((0, job.node_atom[node.id].relation, "relation",
                                             [ri[v] for v, _ in items]))
            for v, _ in items:
                peers = adj[v].get(label)
                if not peers:
                    continue
                a = peers[0]
                if restricted and ctx.states[v].marked.get(e) != a:
                    continue
                if comp:
                    row = data[v]
                    key = tuple(row[i] for i in kp)
                    if None not in key:
                        out.append((a, v, AnchoredId(key, v)))
                else:
                    out.append((a, v, v))
        else:
            states = ctx.states
            for v, _ in items:
                stv = states[v]
                if comp:
                    keys = stv.value
                    payload = ValueSet(keys)
                    if restricted:
                        targets = [t for t, key in stv.marked[e].items() if key in keys]
                    else:
                        targets = adj[v].get(label, ())
                else:
                    payload = v
                    targets = stv.marked[e] if restricted else adj[v].get(label, ())
                for t in targets:
                    out.append((t, v, payload))

    # -- collection --------------------------------------------------------

    def _collect(self, ctx, items, j):
        job = self.job
        pt = job.points[j]
        node = job.plan.nodes[pt.node]
        data = ctx.graph.data
        charged = 0
        if j == job.k:
            send = None
        else:
            st = job.steps[j]
            send = (st.edge, job.has_comp[st.edge])
        tables = {}
        if node.is_relation:
            jcols, jpos = pt.join_cols, pt.join_pos
            # position -1 picks the vertex id appended to the row
            pick = _projector(jpos)
            if j == 0:
                pred = job.local_pred.get(node.id) if job.k == 0 else None
                for v, _ in items:
                    row = data[v]
                    if pred is not None and not pred(row):
                        continue
                    tables[v] = [pick(row + (v,))]
                if job.trace and job.k == 0:
                    ri = job.row_index
                    self.trace_parts.append((0, job.node_atom[node.id].relation, "relation",
                                             [ri[v] for v in tables]))
            else:
                prev_cols = job.points[j - 1].post_cols
                pos = {c: i for i, c in enumerate(jcols)}
                checks = [(prev_cols.index(c), pos[c]) for c in prev_cols if c in pos]
                extra = [pos[c] for c in jcols if c not in prev_cols]
                # a revisited tuple is matched by its id alone; null cells then compare equal to themselves
                revisit = jcols[-1] in prev_cols and jcols[-1].startswith("#")
                if revisit:
                    checks = [(prev_cols.index(jcols[-1]), len(jcols) - 1)]
                single = checks[0] if len(checks) == 1 else None
                for v, msgs in items:
                    mine = pick(data[v] + (v,))
                    tail = tuple(mine[i] for i in extra)
                    rows = []
                    if single is not None:
                        a, b = single
                        want = mine[b]
                        if want is not None:
                            for _, t in msgs:
                                rows.extend(r + tail for r in t.rows if r[a] == want)
                                charged += len(t.rows)
                        else:
                            charged += sum(len(t.rows) for _, t in msgs)
                    else:
                        for _, t in msgs:
                            for r in t.rows:
                                for a, b in checks:
                                    if r[a] != mine[b] or r[a] is None:
                                        break
                                else:
                                    rows.append(r + tail)
                            charged += len(t.rows)
                    if rows:
                        tables[v] = rows
        else:
            for v, msgs in items:
                if len(msgs) == 1:
                    rows = msgs[0][1].rows
                else:
                    rows = [r for _, t in msgs for r in t.rows]
                charged += len(rows)
                tables[v] = rows

        filters = pt.filters
        keep = None if pt.keep_idx is None else _projector(pt.keep_idx)
        cols = pt.post_cols
        # a revisited relation only accepts rows carrying its own id, so route each row to its owner
        hid = None
        if send is not None and not node.is_relation:
            last = job.points[j + 1].join_cols[-1]
            if last.startswith("#") and last in cols:
                hid = cols.index(last)
        out = ctx.outbox
        states = ctx.states
        adj = ctx.graph.adj
        for v, rows in tables.items():
            if filters:
                rows = [r for r in rows if all(f(r) for f in filters)]
            if keep is not None:
                rows = list(map(keep, rows))
            if not rows:
                continue
            if send is None:
                self._finish(ctx, v, Table(cols, rows))
                continue
            e, comp = send
            if node.is_relation:
                peer = states[v].marked.get(e)
                if peer is not None:
                    out.append((peer, v, Table(cols, rows)))
            else:
                marks = states[v].marked.get(e)
                if not marks:
                    continue
                if hid is not None:
                    by_id: dict = {}
                    for r in rows:
                        by_id.setdefault(r[hid], []).append(r)
                    for t in marks:
                        part = by_id.get(t)
                        if part:
                            out.append((t, v, Table(cols, part)))
                elif comp:
                    ci = [cols.index(c) for c in job.plan.nodes[pt.node].companions]
                    by_key: dict = {}
                    for r in rows:
                        by_key.setdefault(tuple(r[i] for i in ci), []).append(r)
                    for t, key in marks.items():
                        part = by_key.get(key)
                        if part:
                            out.append((t, v, Table(cols, part)))
                else:
                    tab = Table(cols, rows)
                    for t in marks:
                        out.append((t, v, tab))
        ctx.charge(charged)

    # -- output and aggregation --------------------------------------------

    def _finish(self, ctx, v, table):
        agg = self.job.agg
        if agg is None:
            ctx.state(v).output = table
            return
        spec = agg.spec
        partials = partials_of(table, spec.group_by, spec.arg)
        ctx.charge(len(table.rows))
        self._emit_partials(ctx, v, partials)

    def _emit_partials(self, ctx, v, partials):
        agg = self.job.agg
        spec = agg.spec
        if spec.kind == "scalar":
            for p in partials.values():
                ctx.aggregate("scalar", Scalar(p), v)
            return
        pt = partial_table(partials, spec.group_by)
        if spec.kind == "local" and agg.group_label is not None:
            peers = ctx.graph.adj[v].get(agg.group_label)
            if peers:
                ctx.send(v, peers[0], pt)
                return
        ctx.aggregate("groups", pt, v)

    def _aggregate_round(self, ctx, items):
        """Group-key attribute vertices merge partials, or hand them on when the key is not functional."""
        agg = self.job.agg
        spec = agg.spec
        for v, msgs in items:
            merged: dict = {}
            for _, t in msgs:
                merge_partial_tables(merged, t)
            ctx.charge(len(merged))
            if len(merged) > 1:
                warn_demotion(self.notes, ctx.graph.attr_key[v][1])
                ctx.aggregate("groups", partial_table(merged, spec.group_by), v)
                continue
            rows = finalize_rows(spec, merged, agg.float_arg, agg.output_columns)
            ctx.state(v).output = Table(agg.output_columns, rows)


def acyclic_join(graph, plan, steps, filters=(), output=None, aggregation: AggregationPlan | None = None,
                 workers: int = 1, trace: bool = False, distributed: bool = False) -> JoinResult:
    """Run the reduction and collection program for one plan and its step list."""
    job = AcyclicJob(graph, plan, steps, filters, output, aggregation, trace)
    program = AcyclicProgram(job)
    start_rel = job.node_atom[job.start].relation
    initial = graph.rel_tuples.get(start_rel, [])
    states, report = run_program(graph, program, initial, max_supersteps=job.max_supersteps, workers=workers)
    report.notes.extend(program.notes)
    result_trace = _build_trace(job, program) if trace else None
    return assemble(job, program, states, report, result_trace, distributed)


def assemble(job, program, states, report, trace, distributed) -> JoinResult:
    """Gather vertex outputs (and aggregator results) into one JoinResult."""
    aggregation = job.agg
    pieces, rows = {}, []
    for v in sorted(states):
        out = states[v].output
        if out is not None:
            pieces[v] = out
            rows.extend(out.rows)
    if aggregation is None:
        cols = job.output
    else:
        spec = aggregation.spec
        cols = aggregation.output_columns
        central = None
        if spec.kind == "scalar":
            parts = {} if program.scalar_partial is None else {(): program.scalar_partial}
            central = finalize_rows(spec, parts, aggregation.float_arg, cols)
            rows = []
        elif program.global_partials:
            central = finalize_rows(spec, program.global_partials, aggregation.float_arg, cols)
        if central:
            rows = rows + central
            pieces[GLOBAL_AGGREGATOR] = Table(cols, central)
    report.IN = sum(len(job.graph.rel_tuples.get(a.relation, ())) for a in job.node_atom.values())
    report.OUT = len(rows)
    if distributed:
        return JoinResult(Table(cols, []), report, trace, pieces)
    return JoinResult(Table(cols, rows), report, trace, None)


def _build_trace(job, program) -> ReductionTrace:
    by_step: dict = {}
    for s, name, kind, ids in program.trace_parts:
        entry = by_step.setdefault(s, [name, kind, set()])
        entry[2].update(ids)
    trace = ReductionTrace()
    last = 2 * job.k
    for s in range(last + 1):
        if s in by_step:
            name, kind, ids = by_step[s]
        else:
            node = job.plan.nodes[job.walk[s - 1].dst if s else job.start]
            name = job.node_atom[node.id].relation if node.is_relation else node.var
            kind = "relation" if node.is_relation else "attribute"
            ids = set()
        trace.snapshots.append((name, frozenset(ids)))
        trace.kinds.append(kind)
    return trace
