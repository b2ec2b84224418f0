"""Join trees, half-integral fractional edge covers, star/cycle decomposition, AGM bounds."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import InvalidDecomposition, MalformedCover, StoreIoError, TooManyAtoms

HALF = Fraction(1, 2)
MAX_COVER_ATOMS = 14


@dataclass
class Bag:
    attrs: frozenset
    atoms: tuple[int, ...]
    children: list[int] = field(default_factory=list)


@dataclass
class JoinTree:
    """Rooted tree of bags; ``atoms`` index into the query's atom list."""
    bags: list[Bag]
    root: int = 0

    def parent_map(self) -> dict[int, int | None]:
        parent = {self.root: None}
        stack = [self.root]
        while stack:
            b = stack.pop()
            for c in self.bags[b].children:
                parent[c] = b
                stack.append(c)
        return parent

    def edges(self) -> list[tuple[int, int]]:
        return [(b, c) for b, bag in enumerate(self.bags) for c in bag.children]

    def preorder(self) -> list[int]:
        out, stack = [], [self.root]
        while stack:
            b = stack.pop()
            out.append(b)
            stack.extend(reversed(self.bags[b].children))
        return out

    def rerooted(self, new_root: int) -> "JoinTree":
        adj = {b: [] for b in range(len(self.bags))}
        for b in self.preorder():
            for c in self.bags[b].children:
                adj[b].append(c)
                adj[c].append(b)
        bags = [Bag(bag.attrs, bag.atoms, []) for bag in self.bags]
        seen, stack = {new_root}, [new_root]
        while stack:
            b = stack.pop()
            for c in adj[b]:
                if c not in seen:
                    seen.add(c)
                    bags[b].children.append(c)
                    stack.append(c)
        return JoinTree(bags, new_root)

    def to_dict(self, q=None, node: int | None = None) -> dict:
        node = self.root if node is None else node
        bag = self.bags[node]
        rels = [q.atoms[i].relation for i in bag.atoms] if q is not None else list(bag.atoms)
        return {"attrs": sorted(bag.attrs), "rels": rels,
                "children": [self.to_dict(q, c) for c in bag.children]}


def running_intersection_ok(tree: JoinTree, atoms) -> bool:
    """Every atom sits in exactly one bag whose attrs cover it, and every
    attribute's bags form a connected subtree."""
    placed = sorted(i for bag in tree.bags for i in bag.atoms)
    if placed != list(range(len(atoms))):
        return False
    for bag in tree.bags:
        if any(not set(atoms[i].vars) <= bag.attrs for i in bag.atoms):
            return False
    reach = tree.parent_map()
    if len(reach) != len(tree.bags):
        return False
    edges = tree.edges()
    for v in {v for bag in tree.bags for v in bag.attrs}:
        holders = {b for b, bag in enumerate(tree.bags) if v in bag.attrs}
        inner = sum(1 for b, c in edges if b in holders and c in holders)
        if inner != len(holders) - 1:
            return False
    return True


def gyo_join_tree(q, atoms=None) -> JoinTree | None:
    """GYO ear removal. Returns a join tree (one atom per bag) or None when cyclic.

    An atom is an ear when the variables it shares with the remaining atoms
    all lie in one other remaining atom, its witness, which becomes its
    parent. The last atom left is the root.
    """
    atoms = list(q.atoms if atoms is None else atoms)
    n = len(atoms)
    if n == 0:
        return None
    varsets = [set(a.vars) for a in atoms]
    alive = list(range(n))
    parent: dict[int, int] = {}
    while len(alive) > 1:
        for e in alive:
            others = [f for f in alive if f != e]
            shared = varsets[e] & set().union(*(varsets[f] for f in others))
            witness = next((f for f in others if shared <= varsets[f]), None)
            if witness is not None:
                parent[e] = witness
                alive.remove(e)
                break
        else:
            return None
    root = alive[0]
    bags = [Bag(frozenset(varsets[i]), (i,)) for i in range(n)]
    for e in range(n):
        if e in parent:
            bags[parent[e]].children.append(e)
    for bag in bags:
        bag.children.sort()
    return JoinTree(bags, root)


def single_bag_tree(q) -> JoinTree:
    attrs = frozenset(v for a in q.atoms for v in a.vars)
    return JoinTree([Bag(attrs, tuple(range(len(q.atoms))))], 0)


def load_ghd(source, q) -> JoinTree:
    """Read a GHD JSON tree ``{"attrs":[...],"rels":[...],"children":[...]}``.

    Relation names are matched to atoms in query order; the file may also
    give atom indices directly.
    """
    if isinstance(source, dict):
        doc = source
    else:
        try:
            with open(source, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise StoreIoError(str(exc)) from exc
    unused = list(range(len(q.atoms)))
    bags: list[Bag] = []

    def build(node) -> int:
        idx = []
        for r in node.get("rels", []):
            if isinstance(r, int):
                pick = r if r in unused else None
            else:
                pick = next((i for i in unused if q.atoms[i].relation == r), None)
            if pick is None:
                raise InvalidDecomposition(f"GHD names relation {r!r} that is absent or used twice")
            unused.remove(pick)
            idx.append(pick)
        attrs = frozenset(node.get("attrs") or {v for i in idx for v in q.atoms[i].vars})
        me = len(bags)
        bags.append(Bag(attrs, tuple(idx)))
        for child in node.get("children", []):
            bags[me].children.append(build(child))
        return me

    build(doc)
    tree = JoinTree(bags, 0)
    if unused:
        raise InvalidDecomposition(f"GHD does not place atoms {unused}")
    if not running_intersection_ok(tree, q.atoms):
        raise InvalidDecomposition("GHD violates the running-intersection property")
    return tree


@dataclass(frozen=True)
class FractionalEdgeCover:
    weights: tuple[Fraction, ...]

    @property
    def cover_number(self) -> Fraction:
        return sum(self.weights, Fraction(0))


def fractional_cover(q=None, edges=None) -> FractionalEdgeCover:
    """Minimum-weight cover with weights in {0, 1/2, 1}.

    ``edges`` (a list of variable sets) overrides the query's atoms. Among
    minimal covers the one that is lexicographically greatest is chosen,
    i.e. earlier atoms prefer weight 1 over 1/2 over 0.
    """
    if edges is None:
        edges = [set(a.vars) for a in q.atoms]
    edges = [frozenset(e) for e in edges]
    n = len(edges)
    if n > MAX_COVER_ATOMS:
        raise TooManyAtoms(f"{n} atoms exceed the enumeration limit of {MAX_COVER_ATOMS}")
    variables = sorted(set().union(*edges)) if edges else []
    # weights are doubled so that 1/2 becomes the integer 1
    need = {v: 2 for v in variables}
    remaining_cap = [dict.fromkeys(variables, 0) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        remaining_cap[i] = dict(remaining_cap[i + 1])
        for v in edges[i]:
            remaining_cap[i][v] += 2
    best: list = [None, None]
    current = [0] * n

    def dfs(i: int, total: int):
        if best[0] is not None and total >= best[0]:
            return
        if any(need[v] > remaining_cap[i][v] for v in variables):
            return
        if i == n:
            best[0], best[1] = total, tuple(current)
            return
        for w in (2, 1, 0):
            current[i] = w
            for v in edges[i]:
                need[v] -= w
            dfs(i + 1, total + w)
            for v in edges[i]:
                need[v] += w
        current[i] = 0

    dfs(0, 0)
    return FractionalEdgeCover(tuple(Fraction(w, 2) for w in best[1]))


@dataclass
class Decomposition:
    stars: list[tuple[int, ...]]
    cycles: list[tuple[int, ...]]
    zero_relations: tuple[int, ...]


def decompose(q=None, cover: FractionalEdgeCover = None, edges=None) -> Decomposition:
    """Split atoms into weight-1 stars, weight-1/2 odd cycles and weight-0 atoms.

    Cycles are returned in traversal order: consecutive atoms share a variable.
    """
    if edges is None:
        edges = [tuple(dict.fromkeys(a.vars)) for a in q.atoms]
    edges = [tuple(dict.fromkeys(e)) for e in edges]
    w = cover.weights
    if len(w) != len(edges):
        raise MalformedCover("cover and query have different atom counts")
    if any(x not in (0, HALF, 1) for x in w):
        raise MalformedCover("weights must be 0, 1/2 or 1")
    for v in set().union(*map(set, edges)) if edges else ():
        if sum((w[i] for i, e in enumerate(edges) if v in e), Fraction(0)) < 1:
            raise MalformedCover(f"variable {v} is not covered")
    if any(len(edges[i]) > 2 for i in range(len(edges)) if w[i] > 0):
        raise MalformedCover("decomposition needs binary atoms; reduce them first")

    ones = [i for i in range(len(edges)) if w[i] == 1]
    halves = [i for i in range(len(edges)) if w[i] == HALF]
    zeros = tuple(i for i in range(len(edges)) if w[i] == 0)

    stars = []
    for comp in _components(ones, edges):
        if len(comp) > 1:
            centers = set(edges[comp[0]]).intersection(*(set(edges[i]) for i in comp[1:]))
            if not centers:
                raise MalformedCover(f"weight-1 atoms {comp} do not form a star")
        stars.append(tuple(comp))

    cycles = []
    for comp in _components(halves, edges):
        if any(len(edges[i]) != 2 for i in comp):
            raise MalformedCover(f"weight-1/2 atoms {comp} include a unary atom")
        degree: dict = {}
        for i in comp:
            for v in edges[i]:
                degree[v] = degree.get(v, 0) + 1
        if len(comp) < 3 or len(comp) % 2 == 0 or any(d != 2 for d in degree.values()):
            raise MalformedCover(f"weight-1/2 atoms {comp} do not form an odd cycle")
        cycles.append(_cycle_order(comp, edges))

    used: dict = {}
    for group in stars + cycles:
        for v in {v for i in group for v in edges[i]}:
            if v in used:
                raise MalformedCover(f"components share variable {v}")
            used[v] = group
    return Decomposition(stars, cycles, zeros)


def _components(idx, edges) -> list[list[int]]:
    comps, seen = [], set()
    for start in idx:
        if start in seen:
            continue
        comp, stack = [], [start]
        seen.add(start)
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in idx:
                if j not in seen and set(edges[i]) & set(edges[j]):
                    seen.add(j)
                    stack.append(j)
        comps.append(sorted(comp))
    return comps


def _cycle_order(comp, edges) -> tuple[int, ...]:
    order = [comp[0]]
    shared_with_prev = edges[comp[0]][0]
    current_var = edges[comp[0]][1]
    left = set(comp[1:])
    while left:
        nxt = next(j for j in sorted(left) if current_var in edges[j])
        left.remove(nxt)
        order.append(nxt)
        a, b = edges[nxt]
        current_var = b if a == current_var else a
    if current_var != shared_with_prev:
        raise MalformedCover("weight-1/2 atoms do not close a cycle")
    return tuple(order)


@dataclass(frozen=True)
class AGMBound:
    """Exact bound prod |R_i|^e_i with half-integral e, kept as its square."""
    squared: int

    @property
    def value(self):
        r = math.isqrt(self.squared)
        return r if r * r == self.squared else math.sqrt(self.squared)

    def admits(self, size: int) -> bool:
        return size >= 0 and size * size <= self.squared


def agm_bound(q=None, cover: FractionalEdgeCover = None, cardinalities=None) -> AGMBound:
    sq = 1
    for w, n in zip(cover.weights, cardinalities):
        sq *= int(n) ** int(2 * w)
    return AGMBound(sq)
