"""Eager aggregation: partial aggregates ride the UP reduction pass.

Ascending steps (child toward parent) carry annotation tables instead of
ids; descending steps still carry ids. A vertex adds annotations that arrive
over one plan edge and multiplies annotations from different edges, so after
the last step every root tuple holds the partial aggregate of all join
results it takes part in. The DOWN and collection passes are skipped.

Each group variable and the aggregate argument are owned by the first atom
that binds them; only the owner's tuples contribute their values.
"""
from __future__ import annotations

from fractions import Fraction

from ..bsp import run_program
from ..errors import UnsupportedQuery
from ..relalg import PARTIAL_COLS, combine_partial
from ..table import Table
from .acyclic import AcyclicJob, AcyclicProgram, assemble

_UNIT = (1, 0, 0, None, None)
_ANN_COLS = ("#group",) + PARTIAL_COLS


def _product(p, q):
    r1, n1, s1, lo1, hi1 = p
    r2, n2, s2, lo2, hi2 = q
    lo = lo1 if lo2 is None or (lo1 is not None and lo1 <= lo2) else lo2
    hi = hi1 if hi2 is None or (hi1 is not None and hi1 >= hi2) else hi2
    return (r1 * r2, n1 * r2 + n2 * r1, s1 * r2 + s2 * r1, lo, hi)


def _multiply(a: dict, b: dict) -> dict:
    out: dict = {}
    for ka, pa in a.items():
        for kb, pb in b.items():
            key = tuple(sorted(ka + kb))
            p = _product(pa, pb)
            out[key] = combine_partial(out[key], p) if key in out else p
    return out


def _add_table(acc: dict, t: Table) -> dict:
    for r in t.rows:
        key, p = r[0], r[1:]
        acc[key] = combine_partial(acc[key], p) if key in acc else p
    return acc


class EagerProgram(AcyclicProgram):
    def __init__(self, job: AcyclicJob):
        super().__init__(job)
        plan = job.plan
        spec = job.agg.spec
        owner: dict[str, int] = {}
        for n in sorted(job.node_atom, key=lambda n: plan.nodes[n].atom):
            for v in job.node_atom[n].vars:
                owner.setdefault(v, n)
        self.group_slots = {}
        for gi, g in enumerate(spec.group_by):
            n = owner[g]
            self.group_slots.setdefault(n, []).append((gi, job.node_atom[n].vars.index(g)))
        self.arg_slot = {}
        if spec.arg is not None:
            n = owner[spec.arg]
            self.arg_slot[n] = job.node_atom[n].vars.index(spec.arg)
        self.ascending = [plan.nodes[st.src].parent == st.dst for st in job.walk]

    def _own(self, node, row):
        key = tuple((gi, row[i]) for gi, i in self.group_slots.get(node, ()))
        i = self.arg_slot.get(node)
        if i is None:
            p = _UNIT
        else:
            x = row[i]
            if x is None:
                p = _UNIT
            else:
                p = (1, 1, Fraction(x) if isinstance(x, float) else x, x, x)
        return {key: p}

    def _ann(self, ctx, v, node):
        st = ctx.state(v)
        ann = st.extra.get(node)
        if ann is None:
            if node in self.job.node_atom:
                ann = self._own(node, ctx.graph.data[v])
            else:
                ann = {(): _UNIT}
            st.extra[node] = ann
        return ann

    def compute_chunk(self, ctx, items):
        job = self.job
        s, k = ctx.superstep, job.k
        if s > k:
            self._aggregate_round(ctx, items)
            return
        if s == 0:
            node = job.start
            pred = job.local_pred.get(node)
            items = [(v, m) for v, m in items if pred is None or pred(ctx.graph.data[v])]
        else:
            items = self._receive(ctx, items, s)
            node = job.walk[s - 1].dst
            up = self.ascending[s - 1]
            charged = 0
            for v, msgs in items:
                ann = self._ann(ctx, v, node)
                if up:
                    incoming: dict = {}
                    for _, t in msgs:
                        _add_table(incoming, t)
                        charged += len(t.rows)
                    ann = _multiply(ann, incoming)
                    charged += len(ann)
                    ctx.state(v).extra[node] = ann
            ctx.charge(charged)
        if s == k:
            spec = job.agg.spec
            for v, _ in items:
                ann = self._ann(ctx, v, node)
                partials = {}
                for key, p in ann.items():
                    d = dict(key)
                    g = tuple(d[i] for i in range(len(spec.group_by)))
                    partials[g] = combine_partial(partials[g], p) if g in partials else p
                self._emit_partials(ctx, v, partials)
            return
        self._send(ctx, items, s)

    def _send(self, ctx, items, s):
        job = self.job
        st = job.walk[s]
        e, label = st.edge, st.label
        restricted = job.restricted[s]
        up = self.ascending[s]
        src = st.src
        adj = ctx.graph.adj
        states = ctx.states
        out = ctx.outbox
        is_rel = src in job.node_atom
        for v, _ in items:
            payload = v
            if up:
                ann = self._ann(ctx, v, src)
                payload = Table(_ANN_COLS, [(key,) + p for key, p in ann.items()])
            if is_rel:
                peers = adj[v].get(label)
                if not peers:
                    continue
                if restricted and states[v].marked.get(e) != peers[0]:
                    continue
                out.append((peers[0], v, payload))
            else:
                targets = states[v].marked[e] if restricted else adj[v].get(label, ())
                for t in targets:
                    out.append((t, v, payload))


def eager_supported(job: AcyclicJob, late_filters) -> str | None:
    """Reason eager aggregation cannot run this job, or None."""
    if any(job.has_comp.values()):
        return "joins on more than one variable between adjacent relations"
    if late_filters:
        return "filters spanning several relations"
    return None


def eager_aggregate(graph, plan, steps, filters, aggregation, workers=1, distributed=False):
    job = AcyclicJob(graph, plan, steps, filters, None, aggregation)
    late = [f for f in filters if not any(set(f.vars) <= set(a.vars) for a in job.node_atom.values())]
    reason = eager_supported(job, late)
    if reason is not None:
        raise UnsupportedQuery(f"eager aggregation unavailable: {reason}")
    program = EagerProgram(job)
    start_rel = job.node_atom[job.start].relation
    states, report = run_program(graph, program, graph.rel_tuples.get(start_rel, []),
                                 max_supersteps=job.max_supersteps, workers=workers)
    report.notes.extend(program.notes)
    return assemble(job, program, states, report, None, distributed)
