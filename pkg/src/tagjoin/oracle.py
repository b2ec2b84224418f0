"""Brute-force reference evaluator.

Everything here is nested loops and plain set algebra over Python tuples. It
deliberately imports nothing from the table, bsp or runtime modules, so a bug
in the engine cannot be mirrored here.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import FunctionTypeMismatch
from .query import Var

NUMERIC_TYPES = ("int", "float")


@dataclass
class OracleResult:
    columns: tuple[str, ...]
    rows: list[tuple]
    provenance: list[tuple[int, ...]] = field(default_factory=list)
    reduction_snapshots: list = field(default_factory=list)

    def reduced(self, atom: int) -> set[int]:
        """Row indices of one atom that contribute to at least one output row."""
        return {p[atom] for p in self.provenance}


def _cmp(op, x, y) -> bool:
    if x is None or y is None:
        return False
    if op == "=":
        return x == y
    if op == "!=":
        return not x == y
    try:
        return {"<": x < y, "<=": x <= y, ">": x > y, ">=": x >= y}[op]
    except TypeError:
        return False


def holds(f, env) -> bool:
    x = env[f.lhs]
    if f.op == "in":
        return x is not None and any(x == c for c in f.rhs)
    if f.op == "range":
        return _cmp(">=", x, f.rhs[0]) and _cmp("<=", x, f.rhs[1])
    y = env[f.rhs.name] if isinstance(f.rhs, Var) else f.rhs
    return _cmp(f.op, x, y)


def _bind(env, vars_, row):
    out = dict(env)
    for v, x in zip(vars_, row):
        if v in out:
            if out[v] is None or x is None or out[v] != x:
                return None
        else:
            out[v] = x
    return out


def nl_join(atoms, db, filters=()) -> OracleResult:
    """Bag-semantics natural join by nested loops, with per-row provenance."""
    columns = tuple(dict.fromkeys(v for a in atoms for v in a.vars))
    rows, prov = [], []

    def rec(i, env, picked):
        if i == len(atoms):
            if all(holds(f, env) for f in filters):
                rows.append(tuple(env[c] for c in columns))
                prov.append(tuple(picked))
            return
        for j, row in enumerate(db[atoms[i].relation]):
            nxt = _bind(env, atoms[i].vars, row)
            if nxt is not None:
                rec(i + 1, nxt, picked + [j])

    rec(0, {}, [])
    return OracleResult(columns, rows, prov)


def project_bag(result: OracleResult, keep) -> list[tuple]:
    idx = [result.columns.index(c) for c in keep]
    return [tuple(r[i] for i in idx) for r in result.rows]


def semi_rows(left_rows, left_vars, right_rows, right_vars, anti=False) -> list[tuple]:
    out = []
    for lr in left_rows:
        env = _bind({}, left_vars, lr)
        hit = False
        if env is not None:
            for rr in right_rows:
                if _bind(env, right_vars, rr) is not None:
                    hit = True
                    break
        if hit != anti:
            out.append(lr)
    return out


def outer_rows(left, right, kind):
    """Two-atom outer join. Returns (columns, rows); join columns are coalesced."""
    (lvars, lrows), (rvars, rrows) = left, right
    columns = tuple(dict.fromkeys(list(lvars) + list(rvars)))
    rows = []
    matched_right = set()
    for lr in lrows:
        env = _bind({}, lvars, lr)
        hit = False
        for j, rr in enumerate(rrows):
            e2 = None if env is None else _bind(env, rvars, rr)
            if e2 is not None:
                hit = True
                matched_right.add(j)
                rows.append(tuple(e2[c] for c in columns))
        if not hit and kind in ("left", "full"):
            env = {v: x for v, x in zip(lvars, lr)}
            rows.append(tuple(env.get(c) for c in columns))
    if kind in ("right", "full"):
        for j, rr in enumerate(rrows):
            if j not in matched_right:
                env = {v: x for v, x in zip(rvars, rr)}
                rows.append(tuple(env.get(c) for c in columns))
    return columns, rows


def _var_type(q, schema, var):
    if schema is None:
        return None
    for a in q.atoms:
        if a.relation in schema and var in a.vars:
            return schema[a.relation].attrs[a.vars.index(var)].type
    return None


def aggregate_rows(columns, rows, spec, arg_type=None) -> list[tuple]:
    """GROUP BY over a bag. Empty input: COUNT scalar gives 0, everything else no rows."""
    func = spec.function
    if func in ("SUM", "AVG") and arg_type is not None and arg_type not in NUMERIC_TYPES:
        raise FunctionTypeMismatch(f"{func} over {arg_type} values")
    gi = [columns.index(g) for g in spec.group_by]
    ai = None if spec.arg is None else columns.index(spec.arg)
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[i] for i in gi), []).append(None if ai is None else r[ai])
    if not groups and not spec.group_by and func == "COUNT":
        return [(0,)]
    out = []
    for key, vals in groups.items():
        present = [v for v in vals if v is not None] if ai is not None else vals
        if func == "COUNT":
            val = len(present)
        elif not present:
            val = None
        elif func == "SUM":
            if any(isinstance(v, float) for v in present):
                val = float(sum(Fraction(v) for v in present))
            else:
                val = sum(present)
        elif func == "AVG":
            val = float(sum(Fraction(v) for v in present) / len(present))
        elif func == "MIN":
            val = min(present)
        else:
            val = max(present)
        out.append(key + (val,))
    return out


def evaluate(q, db, schema=None):
    """Full reference semantics of a QuerySpec. Returns (columns, rows)."""
    inner = [a for a in q.atoms if a.join_kind == "inner"]
    special = [a for a in q.atoms if a.join_kind != "inner"]
    if special:
        base = nl_join(inner, db)
        lvars, lrows = base.columns, base.rows
        for a in special:
            rrows = db[a.relation]
            if a.join_kind in ("semi", "anti"):
                lrows = semi_rows(lrows, lvars, rrows, a.vars, anti=a.join_kind == "anti")
            else:
                lvars, lrows = outer_rows((lvars, lrows), (a.vars, rrows), a.join_kind)
        columns, rows = tuple(lvars), lrows
        rows = [r for r in rows if all(holds(f, dict(zip(columns, r))) for f in q.filters)]
    else:
        res = nl_join(q.atoms, db, q.filters)
        columns, rows = res.columns, res.rows
    for block in q.exists:
        keep = []
        inner_res = nl_join(block.atoms, db)
        for r in rows:
            env = dict(zip(columns, r))
            found = False
            for ir in inner_res.rows:
                ienv = dict(zip(inner_res.columns, ir))
                if any(env[c] is None or ienv[c] != env[c] for c in block.correlation):
                    continue
                merged = {**env, **ienv}
                if all(holds(f, merged) for f in block.filters):
                    found = True
                    break
            if found != block.negated:
                keep.append(r)
        rows = keep
    if q.aggregate is not None:
        arg_type = None if q.aggregate.arg is None else _var_type(q, schema, q.aggregate.arg)
        agg_cols = tuple(q.aggregate.group_by) + (q.aggregate.column,)
        agg = aggregate_rows(columns, rows, q.aggregate, arg_type)
        idx = [agg_cols.index(c) for c in q.output_columns]
        return q.output_columns, [tuple(r[i] for i in idx) for r in agg]
    idx = [columns.index(c) for c in q.head_vars]
    return q.head_vars, [tuple(r[i] for i in idx) for r in rows]


def replay_semijoin_sequence(plan, steps, atoms, db, filters=()) -> list:
    """Semijoin operation sequence over the concatenation of ``steps`` and its reverse.

    Snapshot i is the relation activated by superstep i: a relation snapshot is
    ``(name, frozenset of row indices)``, an attribute snapshot is
    ``(var, frozenset of (value, *companion values))``. Semijoins are applied to
    the relation's latest snapshot, which starts as the relation filtered by
    its own single-relation predicates.
    """
    nodes = plan.nodes
    single = {}
    for f in filters:
        if len(f.vars) == 1:
            single.setdefault(f.vars[0], []).append(f)

    def rel_rows(node):
        atom = atoms[node.atom]
        rows = db[atom.relation]
        own = [f for f in filters if set(f.vars) <= set(atom.vars)]
        out = set()
        for j, row in enumerate(rows):
            env = _bind({}, atom.vars, row)
            if env is not None and all(holds(f, env) for f in own):
                out.add(j)
        return out

    def key_of(node, attr_node, row):
        atom = atoms[node.atom]
        names = (attr_node.var,) + attr_node.companions
        return tuple(row[atom.vars.index(v)] for v in names)

    if not steps:
        root = nodes[plan.root]
        return [(atoms[root.atom].relation, frozenset(rel_rows(root)))]
    walk = list(steps) + [s.reversed() for s in reversed(steps)]
    current: dict[int, set] = {}
    first = nodes[walk[0].src]
    current[first.id] = rel_rows(first)
    snaps = [(atoms[first.atom].relation, frozenset(current[first.id]))]
    prev = current[first.id]
    for st in walk:
        src, dst = nodes[st.src], nodes[st.dst]
        if dst.kind == "attribute":
            rows = db[atoms[src.atom].relation]
            vals = set()
            for j in prev:
                k = key_of(src, dst, rows[j])
                if any(x is None for x in k):
                    continue
                if all(holds(f, {dst.var: k[0]}) for f in single.get(dst.var, ())):
                    vals.add(k)
            snaps.append((dst.var, frozenset(vals)))
            prev = vals
        else:
            rows = db[atoms[dst.atom].relation]
            base = current.get(dst.id)
            if base is None:
                base = rel_rows(dst)
            kept = {j for j in base if key_of(dst, src, rows[j]) in prev}
            current[dst.id] = kept
            snaps.append((atoms[dst.atom].relation, frozenset(kept)))
            prev = kept
    return snaps


def agm_squared(cover_weights, cardinalities) -> int:
    sq = 1
    for w, n in zip(cover_weights, cardinalities):
        sq *= int(n) ** int(Fraction(w) * 2)
    return sq


def check_agm(q, cover, db, out_size: int) -> bool:
    """out_size <= prod |R_i|^{e_i}, compared exactly by squaring both sides."""
    cards = [len(db[a.relation]) for a in q.atoms]
    return out_size * out_size <= agm_squared(cover.weights, cards)


def vertex_packing_bound(edges) -> Fraction:
    """Maximum fractional vertex packing over {0, 1/2, 1}: the LP dual of edge cover."""
    verts = sorted({v for e in edges for v in e})
    best = Fraction(0)
    for ys in itertools.product((0, 1, 2), repeat=len(verts)):
        y = dict(zip(verts, ys))
        if all(sum(y[v] for v in set(e)) <= 2 for e in edges):
            best = max(best, Fraction(sum(ys), 2))
    return best


def brute_force_cover(edges) -> Fraction:
    """Minimum half-integral edge cover by exhaustive enumeration, independent of hypergraph.py."""
    verts = {v for e in edges for v in e}
    best = None
    for ws in itertools.product((0, 1, 2), repeat=len(edges)):
        if all(sum(w for w, e in zip(ws, edges) if v in e) >= 2 for v in verts):
            total = Fraction(sum(ws), 2)
            if best is None or total < best:
                best = total
    return best


def isqrt_exact(n: int):
    r = math.isqrt(n)
    return r if r * r == n else None
