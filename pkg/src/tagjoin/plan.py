"""TAG plans built from join trees, and the connected bottom-up step list."""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import PlanMismatch


@dataclass
class PlanNode:
    id: int
    kind: str  # "relation" or "attribute"
    name: str
    atom: int | None = None
    var: str | None = None
    companions: tuple[str, ...] = ()
    children: list[int] = field(default_factory=list)
    parent: int | None = None
    in_edge: int | None = None

    @property
    def is_relation(self) -> bool:
        return self.kind == "relation"


@dataclass(frozen=True)
class PlanEdge:
    id: int
    rel_node: int
    attr_node: int
    label: str


@dataclass(frozen=True)
class Step:
    label: str
    src: int
    dst: int
    edge: int

    def reversed(self) -> "Step":
        return Step(self.label, self.dst, self.src, self.edge)


@dataclass
class TagPlan:
    nodes: list[PlanNode]
    edges: list[PlanEdge]
    root: int
    atoms: tuple = ()

    @property
    def relation_nodes(self) -> list[PlanNode]:
        return [n for n in self.nodes if n.is_relation]

    @property
    def attribute_nodes(self) -> list[PlanNode]:
        return [n for n in self.nodes if not n.is_relation]

    def edge_between(self, a: int, b: int) -> PlanEdge:
        for e in self.edges:
            if {e.rel_node, e.attr_node} == {a, b}:
                return e
        raise PlanMismatch(f"plan nodes {a} and {b} are not adjacent")

    def rightmost_path(self) -> list[int]:
        path = [self.root]
        while self.nodes[path[-1]].children:
            path.append(self.nodes[path[-1]].children[-1])
        return path

    @property
    def start(self) -> PlanNode:
        return self.nodes[self.rightmost_path()[-1]]

    def preorder(self) -> list[int]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(self.nodes[n].children))
        return out

    def dump(self, steps=None) -> str:
        if len(self.nodes) == 1:
            lines = [f"{node_title(self.nodes[self.root])} (single relation)"]
        else:
            lines = []
        for n in self.preorder():
            node = self.nodes[n]
            for c in node.children:
                child = self.nodes[c]
                lines.append(f"{node_title(node)} --{self.edges[child.in_edge].label}--> {node_title(child)}")
        if steps is not None:
            lines.append("steps: " + (", ".join(s.label for s in steps) or "none"))
        return "\n".join(lines)


def node_title(node: PlanNode) -> str:
    if node.is_relation:
        return node.name
    if node.companions:
        return f"{node.var}[{','.join(node.companions)}]"
    return node.var


def _default_attr_name(schema):
    def name(atom, var):
        if schema is not None and atom.relation in schema:
            return schema[atom.relation].attrs[atom.vars.index(var)].name
        return var
    return name


def build_plan(tree, atoms, schema=None, attr_name=None) -> TagPlan:
    """Relation node per bag, attribute node per group of join-tree edges.

    Each join-tree edge joins on the variables its two bags share. The
    smallest shared variable coordinates the join and the rest travel as
    companions. Adjacent edges with the same coordinator and companions share
    one attribute node, so a single-attribute plan has exactly one node per
    join variable.
    """
    attr_name = attr_name or _default_attr_name(schema)
    for b in tree.bags:
        if len(b.atoms) != 1:
            raise PlanMismatch("plans are built from join trees with one relation per bag")
    order = tree.preorder()
    bag_vars = {b: set(atoms[tree.bags[b].atoms[0]].vars) for b in order}

    tree_edges = []  # (parent bag, child bag, coordinator, companions)
    for b in order:
        for c in tree.bags[b].children:
            shared = sorted(bag_vars[b] & bag_vars[c])
            if not shared:
                raise PlanMismatch(f"join-tree edge between bags {b} and {c} shares no variable")
            tree_edges.append((b, c, shared[0], tuple(shared[1:])))

    group_of = list(range(len(tree_edges)))

    def find(i):
        while group_of[i] != i:
            group_of[i] = group_of[group_of[i]]
            i = group_of[i]
        return i

    for i, (b1, c1, v1, k1) in enumerate(tree_edges):
        for j in range(i):
            b2, c2, v2, k2 = tree_edges[j]
            if (v1, k1) == (v2, k2) and {b1, c1} & {b2, c2}:
                group_of[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(len(tree_edges)):
        groups.setdefault(find(i), []).append(i)

    nodes: list[PlanNode] = []
    edges: list[PlanEdge] = []
    rel_node = {}
    for b in order:
        ai = tree.bags[b].atoms[0]
        rel_node[b] = len(nodes)
        nodes.append(PlanNode(len(nodes), "relation", atoms[ai].relation, atom=ai))

    def connect(rel: int, attr: int, as_child: str):
        atom = atoms[nodes[rel].atom]
        label = f"{atom.relation}.{attr_name(atom, nodes[attr].var)}"
        eid = len(edges)
        edges.append(PlanEdge(eid, rel, attr, label))
        if as_child == "attr":
            nodes[rel].children.append(attr)
            nodes[attr].parent, nodes[attr].in_edge = rel, eid
        else:
            nodes[attr].children.append(rel)
            nodes[rel].parent, nodes[rel].in_edge = attr, eid

    pos = {b: i for i, b in enumerate(order)}
    group_list = sorted(groups.values(), key=lambda g: min(pos[tree_edges[i][1]] for i in g))
    attr_for_child_bag = {}
    for g in group_list:
        bags = {x for i in g for x in tree_edges[i][:2]}
        top = min(bags, key=lambda x: pos[x])
        _, _, var, comp = tree_edges[g[0]]
        aid = len(nodes)
        nodes.append(PlanNode(aid, "attribute", var, var=var, companions=comp))
        for x in bags - {top}:
            attr_for_child_bag[x] = (aid, top)

    # wire in preorder so that child order follows bag insertion order
    placed_attr = set()
    for b in order:
        for c in tree.bags[b].children:
            aid, top = attr_for_child_bag[c]
            if aid not in placed_attr:
                connect(rel_node[top], aid, "attr")
                placed_attr.add(aid)
            connect(rel_node[c], aid, "rel")
    return TagPlan(nodes, edges, rel_node[tree.root], tuple(atoms))


def plan_for_single(atom_index: int, atoms) -> TagPlan:
    return TagPlan([PlanNode(0, "relation", atoms[atom_index].relation, atom=atom_index)], [], 0, tuple(atoms))


def gen_steps(plan: TagPlan) -> list[Step]:
    """DFS from a dummy edge into the root.

    On entering a non-root node its in-edge label is pushed; after visiting
    its children left to right the label is pushed again unless the node lies
    on the rightmost root-leaf path. The result is the pop order of that
    stack, so it starts at the rightmost leaf.
    """
    pushed: list[Step] = []
    on_right = set(plan.rightmost_path())

    def dfs(n: int):
        node = plan.nodes[n]
        if node.parent is not None:
            e = plan.edges[node.in_edge]
            pushed.append(Step(e.label, n, node.parent, e.id))
        for c in node.children:
            dfs(c)
        if n not in on_right:
            e = plan.edges[node.in_edge]
            pushed.append(Step(e.label, node.parent, n, e.id))

    dfs(plan.root)
    return list(reversed(pushed))


def expected_step_count(plan: TagPlan) -> int:
    return 2 * len(plan.edges) - (len(plan.rightmost_path()) - 1)


def check_connected(steps, plan: TagPlan) -> bool:
    """Consecutive steps share a plan node and the walk covers every node.

    Accepts Step objects or bare labels; bare labels must name plan edges.
    """
    if not steps:
        return len(plan.nodes) == 1
    by_label: dict[str, list[PlanEdge]] = {}
    for e in plan.edges:
        by_label.setdefault(e.label, []).append(e)
    candidates = []
    for s in steps:
        if isinstance(s, Step):
            e = plan.edges[s.edge] if 0 <= s.edge < len(plan.edges) else None
            if e is None or {e.rel_node, e.attr_node} != {s.src, s.dst}:
                return False
            candidates.append([(s.src, s.dst)])
        else:
            es = by_label.get(s)
            if not es:
                return False
            candidates.append([(e.rel_node, e.attr_node) for e in es] +
                              [(e.attr_node, e.rel_node) for e in es])

    def walk(i, at, seen):
        if i == len(candidates):
            return len(seen) == len(plan.nodes)
        for src, dst in candidates[i]:
            if at is None or src == at:
                if walk(i + 1, dst, seen | {src, dst}):
                    return True
        return False

    return walk(0, None, frozenset())
