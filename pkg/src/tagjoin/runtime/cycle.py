"""Cycle joins with a heavy/light split on the first cycle variable.

The cycle R1(X1,X2), R2(X2,X3), ..., Rn(Xn,X1) is cut at the anchor variable
and at the meeting variable X_m, m = ceil(n/2 + 1), into two arcs. An anchored
run sends anchor values along both arcs; meeting vertices keep the anchors
that arrive from both sides, signal them back along the per-anchor marks, and
the surviving tuples then collect partial rows forward to the meeting
vertices, which join the two arcs.

Heavy X1 values (more than theta R1 edges) anchor on themselves. Light X1
values wake their R1 tuples, which wake the X2 vertices; that second run
anchors on X2 and its right arc starts with the woken R1 tuples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..bsp import CostReport, ValueSet, VertexProgram, WakeUp, run_program
from ..errors import MoreThanTwoJoinRoles, NotACycle, NotATriangle, UnsupportedQuery
from ..relalg import compile_filter
from ..table import Table, natural_join
from .common import HeavyLightConfig, JoinResult, require_label


@dataclass(frozen=True)
class CycleShape:
    atoms: tuple  # R1..Rn in cycle order
    xs: tuple[str, ...]  # X1..Xn; R_i joins X_i and X_{i+1}

    @property
    def n(self) -> int:
        return len(self.atoms)

    @property
    def meeting(self) -> int:
        """0-based index of the meeting variable."""
        return math.ceil(self.n / 2 + 1) - 1


def cycle_shape(atoms) -> CycleShape:
    """Order atoms around the cycle, starting at ``atoms[0]``.

    Join roles are the variables an atom shares with the other atoms; each atom
    needs exactly two and each role must be shared by exactly two atoms.
    """
    atoms = list(atoms)
    n = len(atoms)
    if n < 3:
        raise NotACycle("a cycle needs at least three atoms")
    if len({a.relation for a in atoms}) != n:
        raise UnsupportedQuery("cycle atoms must name distinct relations")
    holders: dict[str, list[int]] = {}
    for i, a in enumerate(atoms):
        for v in a.distinct_vars():
            holders.setdefault(v, []).append(i)
    roles = []
    for i, a in enumerate(atoms):
        r = [v for v in a.distinct_vars() if len(holders[v]) > 1]
        if len(r) > 2:
            raise MoreThanTwoJoinRoles(f"{a} joins on {r}; only two join attributes per relation are supported")
        if len(r) != 2:
            raise NotACycle(f"{a} does not join exactly two cycle neighbours")
        roles.append(r)
    if any(len(h) > 2 for v, h in holders.items() if len(h) > 1):
        raise NotACycle("a cycle variable is shared by more than two atoms")
    order = [0]
    xs = [roles[0][0], roles[0][1]]
    while len(order) < n:
        cur = xs[-1]
        nxt = next((j for j in holders[cur] if j not in order), None)
        if nxt is None:
            raise NotACycle("atoms do not form a single cycle")
        order.append(nxt)
        a, b = roles[nxt]
        xs.append(b if a == cur else a)
    if xs[-1] != xs[0]:
        raise NotACycle("atoms do not close a cycle")
    return CycleShape(tuple(atoms[i] for i in order), tuple(xs[:-1]))


@dataclass(frozen=True)
class _Hop:
    atom: object
    in_var: str
    out_var: str
    in_label: str
    out_label: str
    in_pos: int
    out_pos: int


class _Run:
    """Static description of one anchored run (heavy or light)."""

    def __init__(self, graph, shape: CycleShape, anchor: int, filters):
        n = shape.n
        self.shape = shape
        ys = [shape.xs[(anchor + j) % n] for j in range(n)]
        es = [shape.atoms[(anchor + j) % n] for j in range(n)]
        meet = (shape.meeting - anchor) % n

        def hop(atom, a, b):
            return _Hop(atom, a, b, require_label(graph, atom, a), require_label(graph, atom, b),
                        atom.vars.index(a), atom.vars.index(b))

        left = [hop(es[j], ys[j], ys[j + 1]) for j in range(meet)]
        right = [hop(es[j], ys[(j + 1) % n], ys[j]) for j in range(n - 1, meet - 1, -1)]
        self.arcs = (left, right)
        self.anchor_var = ys[0]
        self.meet_var = ys[meet]
        self.T = 2 * max(len(left), len(right))
        self.hop_of = {}
        for a, arc in enumerate(self.arcs):
            for i, h in enumerate(arc):
                self.hop_of[h.atom.relation] = (a, i)
        # collection columns per arc after each hop
        self.cols = []
        self.extend = []
        for arc in self.arcs:
            cols = (self.anchor_var,)
            per_hop, ext = [], []
            for h in arc:
                new = [(v, h.atom.vars.index(v)) for v in h.atom.distinct_vars() if v not in cols]
                cols = cols + tuple(v for v, _ in new)
                per_hop.append(cols)
                ext.append(tuple(p for _, p in new))
            self.cols.append(per_hop)
            self.extend.append(ext)
        self.local = {}
        for f in filters:
            for a in shape.atoms:
                if set(f.vars) <= set(a.vars):
                    prev = self.local.get(a.relation)
                    p = compile_filter(f, a.vars)
                    self.local[a.relation] = p if prev is None else (lambda r, x=prev, y=p: x(r) and y(r))

    def phase(self, arc: int, t: int) -> str | None:
        ln = len(self.arcs[arc])
        T = self.T
        if 1 <= t <= 2 * ln:
            return "F"
        if T + 1 <= t <= T + 2 * ln - 1:
            return "B"
        if T + 2 * ln <= t <= T + 4 * ln - 2:
            return "C"
        return None


class CycleProgram(VertexProgram):
    accepts = (int, ValueSet, Table, type(WakeUp))

    def __init__(self, run: _Run, offset: int, light_label: str | None, output, late_filters):
        self.run = run
        self.offset = offset
        self.light_label = light_label  # R1's label on X1, for the wake-up prefix
        self.output = tuple(output)
        self.late = late_filters
        self.plan_edges = run.shape.n
        self.counts: list[tuple[str, int]] = []
        self.meet_rows = []

    def compute_chunk(self, ctx, items):
        t = ctx.superstep - self.offset
        if t < 0:
            self._wake(ctx, items, t)
            return
        if t == 0:
            self._anchor(ctx, items)
            return
        run = self.run
        rel_of = ctx.graph.rel_of
        phase_msgs = {"F": 0, "B": 0, "C": 0}
        for v, msgs in items:
            rel = rel_of[v]
            if rel is not None:
                arc, i = run.hop_of[rel]
                ph = run.phase(arc, t)
                before = len(ctx.outbox)
                self._tuple(ctx, v, msgs, arc, i, ph, t)
                phase_msgs[ph] += len(ctx.outbox) - before
                continue
            groups: dict = {}
            for src, p in msgs:
                groups.setdefault(run.hop_of[rel_of[src]], []).append((src, p))
            for (arc, i), part in sorted(groups.items()):
                ph = run.phase(arc, t)
                before = len(ctx.outbox)
                self._attr(ctx, v, part, arc, i, ph, t)
                phase_msgs[ph] += len(ctx.outbox) - before
        for ph, c in phase_msgs.items():
            if c:
                self.counts.append((ph, c))

    # -- wake-up prefix and anchors ----------------------------------------

    def _wake(self, ctx, items, t):
        graph = ctx.graph
        first = self.run.arcs[1][0]  # R1 traversed from X2 to X1
        if t == -2:
            for v, _ in items:
                ctx.send_many(v, graph.adj[v].get(self.light_label, ()), WakeUp)
        else:
            pred = self.run.local.get(first.atom.relation)
            for v, _ in items:
                row = graph.data[v]
                if pred is not None and not pred(row):
                    continue
                peers = graph.adj[v].get(first.in_label)
                if peers:
                    ctx.state(v).heavy = False
                    ctx.send(v, peers[0], WakeUp)
        self.counts.append(("W", len(ctx.outbox)))

    def _anchor(self, ctx, items):
        adj = ctx.graph.adj
        for v, _ in items:
            payload = ValueSet(frozenset((ctx.graph.attr_key[v][1],)))
            for arc in self.run.arcs:
                ctx.send_many(v, adj[v].get(arc[0].in_label, ()), payload)
        self.counts.append(("F", len(ctx.outbox)))

    # -- tuple vertices ----------------------------------------------------

    def _tuple(self, ctx, v, msgs, arc, i, ph, t):
        run = self.run
        hop = run.arcs[arc][i]
        graph = ctx.graph
        st = ctx.state(v)
        if ph == "F":
            if self.light_label is not None and arc == 1 and i == 0 and st.heavy is not False:
                return
            row = graph.data[v]
            pred = run.local.get(hop.atom.relation)
            if pred is not None and not pred(row):
                return
            peers = graph.adj[v].get(hop.out_label)
            if not peers:
                return
            src, p = msgs[0]
            st.marked[("in", arc)] = src
            st.value = p.values
            ctx.send(v, peers[0], p)
        elif ph == "B":
            valid = msgs[0][1].values
            st.extra["valid"] = valid
            if i > 0:
                ctx.send(v, st.marked[("in", arc)], ValueSet(valid))
            else:
                row = graph.data[v]
                out = tuple(row[p] for p in run.extend[arc][0])
                anchor = graph.attr_key[st.marked[("in", arc)]][1]
                ctx.send(v, msgs[0][0], Table(run.cols[arc][0], [(anchor,) + out]))
        elif ph == "C":
            row = graph.data[v]
            tail = tuple(row[p] for p in run.extend[arc][i])
            rows = [r + tail for _, tab in msgs for r in tab.rows]
            ctx.charge(len(rows))
            peers = graph.adj[v].get(hop.out_label)
            ctx.send(v, peers[0], Table(run.cols[arc][i], rows))

    # -- attribute vertices ------------------------------------------------

    def _attr(self, ctx, v, msgs, arc, i, ph, t):
        run = self.run
        arc_hops = run.arcs[arc]
        st = ctx.state(v)
        adj = ctx.graph.adj
        last = i == len(arc_hops) - 1
        if ph == "F":
            senders = {src: p.values for src, p in msgs}
            st.marked[("prev", arc, i)] = senders
            anchors = frozenset().union(*senders.values())
            ctx.charge(len(msgs))
            if not last:
                ctx.send_many(v, adj[v].get(arc_hops[i + 1].in_label, ()), ValueSet(anchors))
                return
            st.extra[("arrived", arc)] = anchors
            if t == run.T:
                self._meet(ctx, v, st)
        elif ph == "B":
            # v is the in-vertex of hop i; tell hop i-1 tuples which of their anchors survive
            next_valid = {src: p.values for src, p in msgs}
            st.marked[("next", arc, i)] = next_valid
            valid = frozenset().union(*next_valid.values())
            ctx.charge(len(msgs))
            for src, anchors in sorted(st.marked[("prev", arc, i - 1)].items()):
                keep = anchors & valid
                if keep:
                    ctx.send(v, src, ValueSet(keep))
        elif ph == "C":
            rows = [r for _, tab in msgs for r in tab.rows]
            ctx.charge(len(rows))
            if not last:
                by_anchor: dict = {}
                for r in rows:
                    by_anchor.setdefault(r[0], []).append(r)
                cols = run.cols[arc][i]
                for tup, valid in sorted(st.marked[("next", arc, i + 1)].items()):
                    part = [r for a in sorted(valid, key=repr) for r in by_anchor.get(a, ())]
                    if part:
                        ctx.send(v, tup, Table(cols, part))
                return
            st.extra[("rows", arc)] = Table(run.cols[arc][i], rows)
            other = st.extra.get(("rows", 1 - arc))
            if other is not None:
                left, right = (st.extra[("rows", 0)], st.extra[("rows", 1)])
                joined = natural_join(left, right)
                ctx.charge(len(left.rows) + len(right.rows) + len(joined.rows))
                idx = [joined.cols.index(c) for c in self.output]
                out = [tuple(r[j] for j in idx) for r in joined.rows]
                if self.late:
                    out = [r for r in out if all(f(r) for f in self.late)]
                if out:
                    st.output = Table(self.output, out)

    def _meet(self, ctx, v, st):
        left = st.extra.get(("arrived", 0))
        right = st.extra.get(("arrived", 1))
        if not left or not right:
            return
        both = left & right
        for arc in (0, 1):
            i = len(self.run.arcs[arc]) - 1
            for src, anchors in sorted(st.marked[("prev", arc, i)].items()):
                keep = anchors & both
                if keep:
                    ctx.send(v, src, ValueSet(keep))


@dataclass
class CycleStats:
    theta: float
    heavy_anchors: int
    light_anchors: int
    reduction_msgs: int
    per_run: dict


def cycle_join(graph, atoms, cfg: HeavyLightConfig | None = None, filters=(), output=None,
               workers: int = 1, distributed: bool = False) -> JoinResult:
    shape = cycle_shape(atoms)
    return _cycle_join(graph, shape, cfg, filters, output, workers, distributed)


def triangle_join(graph, R, S, T, cfg: HeavyLightConfig | None = None, filters=(), output=None,
                  workers: int = 1, distributed: bool = False) -> JoinResult:
    try:
        shape = cycle_shape([R, S, T])
    except (NotACycle, MoreThanTwoJoinRoles) as exc:
        raise NotATriangle(str(exc)) from exc
    return _cycle_join(graph, shape, cfg, filters, output, workers, distributed)


def _cycle_join(graph, shape, cfg, filters, output, workers, distributed):
    IN = sum(len(graph.rel_tuples.get(a.relation, ())) for a in shape.atoms)
    cfg = cfg or HeavyLightConfig.for_input(IN)
    all_vars = tuple(dict.fromkeys(v for a in shape.atoms for v in a.vars))
    output = tuple(all_vars if output is None else output)
    late = [f for f in filters if not any(set(f.vars) <= set(a.vars) for a in shape.atoms)]
    if any(not set(f.vars) <= set(output) for f in late):
        raise UnsupportedQuery("filters spanning several atoms must use output variables")
    late_preds = [compile_filter(f, output) for f in late]

    r1 = shape.atoms[0]
    x1_label = require_label(graph, r1, shape.xs[0])
    heavy, light = set(), set()
    for t in graph.rel_tuples.get(r1.relation, ()):
        peers = graph.adj[t].get(x1_label)
        if peers:
            a = peers[0]
            (heavy if graph.degree(a, x1_label) > cfg.theta else light).add(a)

    report = CostReport()
    pieces: dict = {}
    per_run = {}
    for name, anchor, offset, start, label in (("heavy", 0, 0, heavy, None),
                                               ("light", 1, 2, light, x1_label)):
        if not start:
            continue
        run = _Run(graph, shape, anchor, filters)
        program = CycleProgram(run, offset, label, output, late_preds)
        max_steps = offset + run.T + 4 * max(len(run.arcs[0]), len(run.arcs[1])) + 8
        states, rep = run_program(graph, program, sorted(start), max_supersteps=max_steps, workers=workers)
        report.extend(rep)
        per_run[name] = {"reduction_msgs": sum(c for ph, c in program.counts if ph in ("W", "F", "B")),
                         "collection_msgs": sum(c for ph, c in program.counts if ph == "C"),
                         "supersteps": rep.supersteps}
        for v in sorted(states):
            out = states[v].output
            if out is not None:
                if v in pieces:
                    pieces[v] = Table(output, pieces[v].rows + out.rows)
                else:
                    pieces[v] = out
    rows = [r for v in sorted(pieces) for r in pieces[v].rows]
    report.IN = IN
    report.OUT = len(rows)
    stats = CycleStats(cfg.theta, len(heavy), len(light),
                       sum(r["reduction_msgs"] for r in per_run.values()), per_run)
    return JoinResult(Table(output, [] if distributed else rows), report, None,
                      pieces if distributed else None, stats)
