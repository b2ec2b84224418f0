"""Result containers and graph lookups shared by the join programs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..bsp import CostReport
from ..errors import PlanMismatch, UnknownAttribute, UnsupportedQuery
from ..table import Table, sorted_rows


@dataclass
class JoinResult:
    table: Table
    report: CostReport
    trace: "ReductionTrace | None" = None
    pieces: dict[int, Table] | None = None
    stats: object = None

    @property
    def rows(self) -> list[tuple]:
        return self.table.rows

    def sorted(self) -> list[tuple]:
        return sorted_rows(self.table.rows)


@dataclass
class ReductionTrace:
    """Survivors of every reduction superstep.

    A relation snapshot is ``(relation, frozenset of row indices)``; an
    attribute snapshot is ``(variable, frozenset of (value, *companions))``.
    """
    snapshots: list[tuple[str, frozenset]] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)

    def alternates(self) -> bool:
        return all(a != b for a, b in zip(self.kinds, self.kinds[1:]))


@dataclass(frozen=True)
class HeavyLightConfig:
    theta: float
    IN: int

    @classmethod
    def for_input(cls, IN: int, theta=None) -> "HeavyLightConfig":
        if theta is None:
            theta = max(1, math.isqrt(max(IN - 1, 0)) + 1) if IN > 0 else 1
        if theta < 0:
            raise ValueError("theta must be non-negative")
        return cls(theta, IN)


def relation_columns(graph, relation: str) -> tuple[str, ...]:
    schema = graph.schema
    if schema is not None and relation in schema:
        return schema[relation].attr_names
    cols = getattr(graph, "virtual_columns", {}).get(relation)
    if cols is None:
        raise PlanMismatch(f"relation {relation!r} is not in the graph")
    return tuple(cols)


def attr_type(graph, relation: str, column: str) -> str | None:
    """Value type of a materialized column, None when it has no edges."""
    schema = graph.schema
    if schema is not None and relation in schema:
        rel = schema[relation]
        a = rel.attrs[rel.index(column)]
        return a.type if a.materialize else None
    return getattr(graph, "virtual_types", {}).get(relation, {}).get(column)


def label_for(graph, atom, var) -> str:
    cols = relation_columns(graph, atom.relation)
    return f"{atom.relation}.{cols[atom.vars.index(var)]}"


def require_label(graph, atom, var) -> str:
    """Edge label joining ``atom`` on ``var``; raises if that column has no edges."""
    cols = relation_columns(graph, atom.relation)
    if var not in atom.vars:
        raise UnknownAttribute(f"{atom} has no variable {var}")
    col = cols[atom.vars.index(var)]
    if attr_type(graph, atom.relation, col) is None:
        raise UnsupportedQuery(f"cannot join on unmaterialized attribute {atom.relation}.{col}")
    return f"{atom.relation}.{col}"


def attr_name_fn(graph):
    def name(atom, var):
        return relation_columns(graph, atom.relation)[atom.vars.index(var)]
    return name


def row_index(graph, relations) -> dict[int, int]:
    out = {}
    for r in relations:
        for i, v in enumerate(graph.rel_tuples.get(r, ())):
            out[v] = i
    return out


def collect_outputs(states, cols, distributed: bool):
    """Gather ``output`` tables in vertex order. Returns (table, pieces)."""
    pieces = {}
    rows = []
    for v in sorted(states):
        out = states[v].output
        if out is not None:
            pieces[v] = out
            if not distributed:
                rows.extend(out.rows)
    return Table(cols, rows), (pieces if distributed else None)
