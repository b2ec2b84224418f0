"""Full query evaluation: components, bags, special joins and EXISTS blocks.

Intermediate results are stored as virtual relations of an overlay graph, so
every later stage is an ordinary vertex program over tuple vertices.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction

from ..bsp import CostReport
from ..errors import InvalidDecomposition, MalformedCover, MoreThanTwoJoinRoles, NotACycle, UnsupportedQuery
from ..hypergraph import Bag, FractionalEdgeCover, JoinTree, agm_bound, decompose, fractional_cover, gyo_join_tree
from ..plan import build_plan, gen_steps
from ..query import Atom
from ..relalg import check_aggregate_types, compile_filter
from ..table import Table
from ..tag_store import OverlayGraph
from .acyclic import AggregationPlan, acyclic_join
from .cartesian import cartesian_b
from .common import HeavyLightConfig, JoinResult, attr_name_fn, attr_type, relation_columns
from .cycle import cycle_join, cycle_shape
from .eager import eager_aggregate
from .twoway import Side, binary_join

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BinaryView:
    """An atom seen through its two join attributes; other columns ride along as data."""
    atom: Atom
    roles: tuple[str, ...]
    extra: tuple[str, ...]


def reduce_to_binary(graph, atom: Atom, bag_atoms) -> BinaryView:
    others = {v for a in bag_atoms if a is not atom for v in a.vars}
    roles = tuple(v for v in atom.distinct_vars() if v in others)
    if len(roles) > 2:
        raise MoreThanTwoJoinRoles(
            f"{atom} joins on {list(roles)} inside one cyclic bag; pick a decomposition that splits it")
    relation_columns(graph, atom.relation)
    return BinaryView(atom, roles, tuple(v for v in atom.distinct_vars() if v not in roles))


@dataclass
class BagRecord:
    atoms: tuple[str, ...]
    method: str
    size: int
    agm_squared: int

    @property
    def within_agm(self) -> bool:
        return self.size * self.size <= self.agm_squared


@dataclass
class TagJoinStats:
    bags: list[BagRecord] = field(default_factory=list)
    theta: float | None = None
    plans: list[str] = field(default_factory=list)  # one rendering per executed TAG program, in order


def _components(atoms) -> list[list[int]]:
    comps, seen = [], set()
    for s in range(len(atoms)):
        if s in seen:
            continue
        comp, stack = [], [s]
        seen.add(s)
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in range(len(atoms)):
                if j not in seen and set(atoms[i].vars) & set(atoms[j].vars):
                    seen.add(j)
                    stack.append(j)
        comps.append(sorted(comp))
    return comps


def default_ghd(atoms) -> JoinTree:
    """Peel GYO ears; what remains becomes one bag and every ear its own bag."""
    varsets = [set(a.vars) for a in atoms]
    alive = list(range(len(atoms)))
    parent: dict[int, int] = {}
    progress = True
    while len(alive) > 1 and progress:
        progress = False
        for e in alive:
            others = [f for f in alive if f != e]
            shared = varsets[e] & set().union(*(varsets[f] for f in others))
            witness = next((f for f in others if shared <= varsets[f]), None)
            if witness is not None:
                parent[e] = witness
                alive.remove(e)
                progress = True
                break
    core = tuple(sorted(alive))
    bag_of = {i: 0 for i in core}
    bags = [Bag(frozenset().union(*(varsets[i] for i in core)), core)]
    for e in sorted(parent):
        bag_of[e] = len(bags)
        bags.append(Bag(frozenset(varsets[e]), (e,)))
    for e, w in parent.items():
        # resolve the witness chain to the bag that finally holds it
        bags[bag_of[w]].children.append(bag_of[e])
    for b in bags:
        b.children.sort()
    return JoinTree(bags, 0)


def _alternative_covers(edges, total):
    n = len(edges)
    vars_ = set().union(*map(set, edges)) if edges else set()
    for combo in itertools.product((2, 1, 0), repeat=n):
        if sum(combo) != total:
            continue
        if all(sum(combo[i] for i, e in enumerate(edges) if v in e) >= 2 for v in vars_):
            yield FractionalEdgeCover(tuple(Fraction(w, 2) for w in combo))


class _Session:
    def __init__(self, graph, q, cfg, workers, trace, theta=None):
        self.base = graph
        self.graph = graph
        self.q = q
        self.workers = workers
        self.trace = trace
        self.report = CostReport()
        self.stats = TagJoinStats()
        self.counter = 0
        self.flat: dict = {}
        self.types: dict[str, str] = {}
        self.materialized: set[str] = set()
        for a in list(q.atoms) + [x for b in q.exists for x in b.atoms]:
            cols = relation_columns(graph, a.relation)
            for v, c in zip(a.vars, cols):
                t = attr_type(graph, a.relation, c)
                if t is not None:
                    self.types.setdefault(v, t)
                    self.materialized.add(v)
                elif graph.schema is not None and a.relation in graph.schema:
                    rel = graph.schema[a.relation]
                    self.types.setdefault(v, rel.attrs[rel.index(c)].type)
        IN = sum(len(graph.rel_tuples.get(a.relation, ())) for a in q.atoms)
        self.IN = IN
        self.cfg = cfg or HeavyLightConfig.for_input(IN, theta)
        self.stats.theta = self.cfg.theta

    # -- overlay helpers ---------------------------------------------------

    def overlay(self):
        if self.graph is self.base:
            self.graph = OverlayGraph(self.base)
        return self.graph

    def fresh(self, hint: str) -> str:
        self.counter += 1
        return f"#{hint}{self.counter}"

    def store(self, hint, cols, rows) -> Atom:
        """Materialize rows as a virtual relation joined on its materialized variables."""
        g = self.overlay()
        name = self.fresh(hint)
        index = self.base.index
        connect = {}
        for i, c in enumerate(cols):
            t = self.types.get(c)
            if c in self.materialized and all(r[i] is None or (t, r[i]) in index for r in rows):
                connect[c] = t
        g.add_relation(name, cols, rows, connect)
        return Atom(name, tuple(cols))

    def run(self, res: JoinResult) -> JoinResult:
        self.report.extend(res.report)
        return res

    def alias(self, atoms):
        """Give every repeated relation its own copy so labels tell the atoms apart."""
        seen: dict[str, int] = {}
        out = []
        for a in atoms:
            k = seen.get(a.relation, 0)
            seen[a.relation] = k + 1
            if k == 0:
                out.append(a)
                continue
            g = self.overlay()
            cols = relation_columns(g, a.relation)
            name = f"{a.relation}#{k + 1}"
            connect = {c: attr_type(g, a.relation, c) for c in cols}
            connect = {c: t for c, t in connect.items() if t is not None}
            g.add_relation(name, cols, g.relation_rows(a.relation), connect)
            out.append(Atom(name, a.vars, a.join_kind))
        return out

    def flatten(self, atom: Atom) -> Atom:
        """Rewrite an atom with a repeated variable as a filtered copy with distinct columns."""
        if len(set(atom.vars)) == len(atom.vars):
            return atom
        key = (atom.relation, atom.vars)
        if key in self.flat:
            return Atom(self.flat[key], atom.distinct_vars(), atom.join_kind)
        g = self.overlay()
        cols = relation_columns(g, atom.relation)
        first = {v: atom.vars.index(v) for v in atom.distinct_vars()}
        keep = [first[v] for v in atom.distinct_vars()]
        rows = [tuple(r[i] for i in keep) for r in g.relation_rows(atom.relation)
                if all(r[i] is not None and r[i] == r[first[v]] for i, v in enumerate(atom.vars))]
        name = self.fresh(atom.relation + "~")
        kept_cols = [cols[i] for i in keep]
        connect = {c: attr_type(g, atom.relation, c) for c in kept_cols}
        g.add_relation(name, kept_cols, rows, {c: t for c, t in connect.items() if t is not None})
        self.flat[key] = name
        return Atom(name, atom.distinct_vars(), atom.join_kind)

    # -- inner joins -------------------------------------------------------

    def aggregation_plan(self, atoms, tree):
        spec = self.q.aggregate
        if spec is None:
            return None, tree
        arg_type = None if spec.arg is None else self.types.get(spec.arg)
        check_aggregate_types(spec, arg_type)
        label = None
        if spec.kind == "local":
            home = next(i for i, a in enumerate(atoms) if spec.group_by[0] in a.vars)
            bag = next(b for b, bag in enumerate(tree.bags) if home in bag.atoms)
            tree = tree.rerooted(bag)
            a = atoms[home]
            col = relation_columns(self.graph, a.relation)[a.vars.index(spec.group_by[0])]
            if attr_type(self.graph, a.relation, col) is not None:
                label = f"{a.relation}.{col}"
        return AggregationPlan(spec, arg_type == "float", self.q.output_columns, label), tree

    def acyclic(self, atoms, tree, filters, output, aggregate: bool, distributed=False):
        agg = None
        if aggregate:
            agg, tree = self.aggregation_plan(atoms, tree)
        plan = build_plan(tree, atoms, attr_name=attr_name_fn(self.graph))
        steps = gen_steps(plan)
        self.stats.plans.append(plan.dump(steps))
        if agg is not None and agg.spec.eager:
            try:
                return self.run(eager_aggregate(self.graph, plan, steps, filters, agg,
                                                self.workers, distributed))
            except UnsupportedQuery as exc:
                msg = f"eager aggregation fell back to the lazy program: {exc}"
                log.warning(msg)
                self.report.notes.append(msg)
        return self.run(acyclic_join(self.graph, plan, steps, filters, output, agg,
                                     self.workers, self.trace, distributed))

    def join(self, atoms, filters, output, aggregate=False, ghd=None, covers=None, distributed=False):
        """Inner join of ``atoms``; returns a JoinResult over ``output`` (or the aggregate)."""
        comps = _components(atoms)
        if len(comps) == 1:
            return self.connected(atoms, filters, output, aggregate, ghd, covers, distributed)
        if ghd is not None:
            raise InvalidDecomposition("a decomposition cannot span disconnected atoms")
        operands = []
        for comp in comps:
            sub = [atoms[i] for i in comp]
            svars = tuple(dict.fromkeys(v for a in sub for v in a.vars))
            local = [f for f in filters if set(f.vars) <= set(svars)]
            if len(sub) == 1 and not local:
                operands.append(self.flatten(sub[0]))
                continue
            res = self.connected(sub, local, svars, False, None, None, False)
            operands.append(self.store("part", res.table.cols, res.rows))
        prod = self.product(operands)
        p = self.store("prod", prod.table.cols, prod.rows)
        return self.acyclic([p], gyo_join_tree(None, [p]), filters, output, aggregate, distributed)

    def connected(self, atoms, filters, output, aggregate, ghd, covers, distributed):
        tree = None
        if ghd is not None:
            if all(len(b.atoms) == 1 for b in ghd.bags):
                tree = ghd
        else:
            tree = gyo_join_tree(None, atoms)
        if tree is not None:
            return self.acyclic(atoms, tree, filters, output, aggregate, distributed)
        if ghd is None and covers is None and self.simple_cycle(atoms):
            res = self.cycle(atoms, filters)
            c = self.store("bag", res.table.cols, res.rows)
            return self.acyclic([c], gyo_join_tree(None, [c]), filters, output, aggregate, distributed)
        ghd = ghd or default_ghd(atoms)
        stage = []
        for b, bag in enumerate(ghd.bags):
            members = [atoms[i] for i in bag.atoms]
            if len(members) == 1:
                stage.append(members[0])
                continue
            bag_cover = None if covers is None else covers.get(b) if isinstance(covers, dict) else covers
            cols, rows = self.bag(members, filters, bag_cover)
            stage.append(self.store("bag", cols, rows))
        tree2 = gyo_join_tree(None, stage)
        if tree2 is None:
            raise InvalidDecomposition("bags do not form a join tree")
        return self.acyclic(stage, tree2, filters, output, aggregate, distributed)

    def simple_cycle(self, atoms) -> bool:
        if len(atoms) < 3:
            return False
        try:
            cycle_shape([self.flatten(a) for a in atoms])
        except (NotACycle, MoreThanTwoJoinRoles, UnsupportedQuery):
            return False
        return True

    def cycle(self, atoms, filters) -> JoinResult:
        atoms = [self.flatten(a) for a in atoms]
        local = [f for f in filters if any(set(f.vars) <= set(a.vars) for a in atoms)]
        ring = " -> ".join(a.relation for a in atoms)
        self.stats.plans.append(f"cycle: {ring} -> {atoms[0].relation} (theta={self.stats.theta})")
        res = self.run(cycle_join(self.graph, atoms, self.cfg, local, workers=self.workers))
        self.record(atoms, "cycle", len(res.rows))
        return res

    def product(self, operands) -> JoinResult:
        names = " x ".join(o if isinstance(o, str) else o.relation for o in operands)
        self.stats.plans.append(f"product: {names}")
        return self.run(cartesian_b(self.graph, operands, self.workers))

    def record(self, atoms, method, size):
        edges = [set(a.vars) for a in atoms]
        cover = fractional_cover(edges=edges)
        sizes = [len(self.graph.rel_tuples.get(a.relation, ())) for a in atoms]
        bound = agm_bound(cover=cover, cardinalities=sizes)
        self.stats.bags.append(BagRecord(tuple(a.relation for a in atoms), method, size, bound.squared))

    def bag(self, members, filters, cover):
        """Evaluate one multi-atom bag. Returns (columns, rows) over all its variables."""
        members = [self.flatten(a) for a in members]
        cols = tuple(dict.fromkeys(v for a in members for v in a.vars))
        local = [f for f in filters if any(set(f.vars) <= set(a.vars) for a in members)]
        tree = gyo_join_tree(None, members)
        if tree is not None and cover is None:
            res = self.acyclic(members, tree, local, cols, False)
            self.record(members, "acyclic", len(res.rows))
            return res.table.cols, res.rows
        views = [reduce_to_binary(self.graph, a, members) for a in members]
        edges = [v.roles or v.atom.distinct_vars() for v in views]
        if cover is not None and not isinstance(cover, FractionalEdgeCover):
            cover = FractionalEdgeCover(tuple(Fraction(w) for w in cover))
        candidates = [cover] if cover is not None else [fractional_cover(edges=edges)]
        if cover is None:
            total = int(2 * candidates[0].cover_number)
            candidates += [c for c in _alternative_covers(edges, total) if c != candidates[0]]
        decomp = None
        for c in candidates:
            try:
                decomp = decompose(edges=edges, cover=c)
                cover = c
                break
            except MalformedCover:
                if len(candidates) == 1:
                    raise
        if decomp is None:
            raise MalformedCover("no half-integral cover of this bag splits into stars and odd cycles")
        operands = []
        for star in decomp.stars:
            sub = [members[i] for i in star]
            if len(sub) == 1:
                operands.append(sub[0])
                continue
            scols = tuple(dict.fromkeys(v for a in sub for v in a.vars))
            slocal = [f for f in local if set(f.vars) <= set(scols)]
            res = self.acyclic(sub, gyo_join_tree(None, sub), slocal, scols, False)
            operands.append(self.store("star", res.table.cols, res.rows))
        for cyc in decomp.cycles:
            res = self.cycle([members[i] for i in cyc], local)
            operands.append(self.store("cyc", res.table.cols, res.rows))
        if len(operands) == 1:
            p = operands[0]
        else:
            prod = self.product(operands)
            p = self.store("prod", prod.table.cols, prod.rows)
        zeros = [members[i] for i in decomp.zero_relations]
        if zeros:
            sub = [p] + zeros
            root = Bag(frozenset(p.vars), (0,), list(range(1, len(sub))))
            tree = JoinTree([root] + [Bag(frozenset(z.vars), (i + 1,)) for i, z in enumerate(zeros)], 0)
            res = self.acyclic(sub, tree, local, cols, False)
            out_cols, rows = res.table.cols, res.rows
        else:
            rows = self.graph.relation_rows(p.relation)
            out_cols = p.vars
            preds = [compile_filter(f, out_cols) for f in local if set(f.vars) <= set(out_cols)]
            rows = [r for r in rows if all(pr(r) for pr in preds)]
        idx = [list(out_cols).index(c) for c in cols]
        rows = [tuple(r[i] for i in idx) for r in rows]
        self.record(members, "decomposition", len(rows))
        return cols, rows

    # -- special atoms and EXISTS -----------------------------------------

    def special(self, base: Atom, atom: Atom) -> Atom:
        atom = self.flatten(atom)
        on = tuple(v for v in base.vars if v in atom.vars)
        if not on:
            raise UnsupportedQuery(f"{atom.join_kind} atom {atom} shares no variable with the rest of the query")
        res = self.run(binary_join(self.graph, Side(base.relation, base.vars), Side(atom.relation, atom.vars),
                                   on, atom.join_kind, workers=self.workers))
        return self.store("j", res.table.cols, res.rows)

    def exists(self, outer: Atom, block) -> Atom:
        atoms = [self.flatten(a) for a in block.atoms]
        bvars = set(v for a in atoms for v in a.vars)
        local = [f for f in block.filters if set(f.vars) <= bvars]
        cross = [f for f in block.filters if not set(f.vars) <= bvars]
        corr = tuple(v for v in outer.vars if v in bvars)
        need = tuple(dict.fromkeys(corr + tuple(v for f in cross for v in f.vars if v in bvars)))
        kind = "anti" if block.negated else "semi"
        inner = self.join(atoms, local, need)
        found = self.store("ex", inner.table.cols, inner.rows)
        if not cross:
            res = self.run(binary_join(self.graph, Side(outer.relation, outer.vars), Side(found.relation, found.vars),
                                       corr, kind, workers=self.workers))
            return self.store("j", res.table.cols, res.rows)
        # correlated filters on outer-only variables: probe with row ids, then keep matching rows
        rows = self.graph.relation_rows(outer.relation)
        tagged = self.store("rid", outer.vars + ("#rid",), [r + (i,) for i, r in enumerate(rows)])
        res = self.run(binary_join(self.graph, Side(tagged.relation, tagged.vars), Side(found.relation, found.vars),
                                   corr, "inner", filters=cross, workers=self.workers))
        hit = {r[res.table.cols.index("#rid")] for r in res.rows}
        keep = [r for i, r in enumerate(rows) if (i in hit) != block.negated]
        return self.store("j", outer.vars, keep)


def tag_join(graph, q, ghd=None, covers=None, cfg: HeavyLightConfig | None = None, workers: int = 1,
             distributed: bool = False, trace: bool = False, theta=None) -> JoinResult:
    """Evaluate a parsed query. ``ghd`` is a JoinTree over ``q.atoms``; ``covers`` maps bag index to weights.

    ``theta`` overrides the heavy/light degree threshold when no ``cfg`` is given.
    """
    s = _Session(graph, q, cfg, workers, trace, theta)
    atoms = s.alias(list(q.atoms) + [a for b in q.exists for a in b.atoms])
    n_outer = len(q.atoms)
    outer_atoms, block_atoms = atoms[:n_outer], atoms[n_outer:]
    inner = [a for a in outer_atoms if a.join_kind == "inner"]
    special = [a for a in outer_atoms if a.join_kind != "inner"]
    if not inner:
        raise UnsupportedQuery("a query needs at least one plain atom")
    if ghd is not None and special:
        raise UnsupportedQuery("a decomposition can only be given for queries of plain atoms")
    agg = q.aggregate is not None
    if not special and not q.exists:
        res = s.join(inner, q.filters, q.head_vars, agg, ghd, covers, distributed)
        return _finish(s, res)

    inner_vars = tuple(dict.fromkeys(v for a in inner for v in a.vars))
    res = s.join(inner, [] if special else q.filters, inner_vars, False, ghd, covers)
    cur = s.store("base", res.table.cols, res.rows)
    for a in special:
        cur = s.special(cur, a)
    if special and q.filters:
        visible = tuple(cur.vars)
        res = s.acyclic([cur], gyo_join_tree(None, [cur]), q.filters, visible, False)
        cur = s.store("sel", res.table.cols, res.rows)
    k = 0
    for block in q.exists:
        n = len(block.atoms)
        aliased = type(block)(tuple(block_atoms[k:k + n]), block.filters, block.negated, block.correlation)
        k += n
        cur = s.exists(cur, aliased)
    res = s.acyclic([cur], gyo_join_tree(None, [cur]), (), q.head_vars, agg, distributed)
    return _finish(s, res)


def _finish(s: _Session, res: JoinResult) -> JoinResult:
    report = s.report
    report.IN = s.IN
    report.OUT = res.report.OUT
    return JoinResult(res.table, report, res.trace, res.pieces, s.stats)
