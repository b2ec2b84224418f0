"""Schemas, CSV ingestion and the tuple-attribute graph.

Every tuple occurrence becomes a tuple vertex holding the full row. Every
distinct (type, value) of a materialized attribute becomes one attribute
vertex, shared by all relations and attribute names that use it. An edge
labeled ``Rel.Attr`` joins a tuple vertex to the vertex of each non-null
materialized cell.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    HeaderMismatch,
    SchemaError,
    StoreIoError,
    TypeParseError,
    UnknownVertex,
)

TYPES = ("int", "string", "date", "float", "text")
_UNMATERIALIZED_BY_DEFAULT = {"float", "text"}


@dataclass(frozen=True)
class Attribute:
    name: str
    type: str
    materialize: bool


@dataclass(frozen=True)
class Relation:
    name: str
    attrs: tuple[Attribute, ...]

    @property
    def attr_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attrs)

    def index(self, attr: str) -> int:
        for i, a in enumerate(self.attrs):
            if a.name == attr:
                return i
        raise SchemaError(f"relation {self.name} has no attribute {attr!r}")


@dataclass
class Schema:
    relations: dict[str, Relation] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        schema = cls()
        for rel in doc.get("relations", []):
            name = rel["name"]
            if name in schema.relations:
                raise SchemaError(f"duplicate relation {name!r}")
            attrs, seen = [], set()
            for a in rel["attrs"]:
                typ = a.get("type", "string")
                if typ not in TYPES:
                    raise SchemaError(f"{name}.{a['name']}: unknown type {typ!r}")
                if a["name"] in seen:
                    raise SchemaError(f"duplicate attribute {name}.{a['name']}")
                seen.add(a["name"])
                mat = a.get("materialize", typ not in _UNMATERIALIZED_BY_DEFAULT)
                attrs.append(Attribute(a["name"], typ, bool(mat)))
            schema.relations[name] = Relation(name, tuple(attrs))
        return schema

    def to_dict(self) -> dict:
        return {"relations": [
            {"name": r.name, "attrs": [
                {"name": a.name, "type": a.type, "materialize": a.materialize} for a in r.attrs]}
            for r in self.relations.values()]}

    def __getitem__(self, name: str) -> Relation:
        return self.relations[name]

    def __contains__(self, name: str) -> bool:
        return name in self.relations


def load_schema(path) -> Schema:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise StoreIoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return Schema.from_dict(doc)


def parse_value(text: str, typ: str):
    """Parse one CSV cell. The empty string is null."""
    if text == "":
        return None
    if typ == "int":
        return int(text)
    if typ == "float":
        return float(text)
    if typ == "date":
        try:
            return _dt.date.fromisoformat(text).isoformat()
        except ValueError:
            return _dt.datetime.fromisoformat(text).date().isoformat()
    return text


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_csv(schema: Schema, relation: str, path) -> list[tuple]:
    rel = schema[relation]
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != rel.attr_names:
                raise HeaderMismatch(
                    f"{path}: header {header} does not match {list(rel.attr_names)}")
            rows = []
            for rowno, cells in enumerate(reader, start=1):
                if len(cells) != len(rel.attrs):
                    raise HeaderMismatch(f"{path}: row {rowno} has {len(cells)} fields")
                row = []
                for a, text in zip(rel.attrs, cells):
                    try:
                        row.append(parse_value(text, a.type))
                    except ValueError:
                        raise TypeParseError(rowno, a.name, text, a.type) from None
                rows.append(tuple(row))
            return rows
    except OSError as exc:
        raise StoreIoError(str(exc)) from exc


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def load_database(schema: Schema, data_dir) -> dict[str, list[tuple]]:
    """Read ``<data_dir>/<Relation>.csv`` for every relation in the schema."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise StoreIoError(f"{data_dir}: not a directory")
    return {name: load_csv(schema, name, data_dir / f"{name}.csv") for name in schema.relations}


class TagGraph:
    """Tuple vertices take ids ``[0, n_tuples)``; attribute vertices follow.

    ``adj[v]`` maps an edge label to the list of peers; a tuple vertex has
    exactly one peer per label. ``rel_of[v]`` is the relation name for tuple
    vertices and None for attribute vertices.
    """

    def __init__(self, schema: Schema):
        self.schema = schema
        self.adj: list[dict[str, list[int]]] = []
        self.rel_of: list[str | None] = []
        self.data: list[tuple | None] = []
        self.attr_key: list[tuple | None] = []
        self.index: dict[tuple, int] = {}
        self.rel_tuples: dict[str, list[int]] = {}
        self.n_tuples = 0

    @property
    def n_vertices(self) -> int:
        return len(self.adj)

    def is_tuple(self, v: int) -> bool:
        return self.rel_of[v] is not None

    def edge_count(self) -> int:
        return sum(len(peers) for v in range(self.n_tuples) for peers in self.adj[v].values())

    def attr_vertex(self, typ: str, value) -> int | None:
        return self.index.get((typ, value))

    def degree(self, v: int, label: str) -> int:
        if not 0 <= v < len(self.adj):
            raise UnknownVertex(f"vertex {v} is not in the graph")
        return len(self.adj[v].get(label, ()))

    def relation_rows(self, name: str) -> list[tuple]:
        return [self.data[v] for v in self.rel_tuples.get(name, [])]

    def value_of(self, v: int):
        key = self.attr_key[v]
        return None if key is None else key[1]


def build_tag(schema: Schema, data: dict[str, list[tuple]]) -> TagGraph:
    g = TagGraph(schema)
    names = [n for n in schema.relations if n in data]
    total = sum(len(data[n]) for n in names)
    g.n_tuples = total
    g.adj = [None] * total
    g.rel_of = [None] * total
    g.data = [None] * total
    g.attr_key = [None] * total
    index, adj = g.index, g.adj
    next_id = 0
    for name in names:
        rel = schema[name]
        mat = [(i, f"{name}.{a.name}", a.type) for i, a in enumerate(rel.attrs) if a.materialize]
        vids = []
        for row in data[name]:
            if len(row) != len(rel.attrs):
                raise SchemaError(f"{name}: row {row} has wrong arity")
            tid = next_id
            next_id += 1
            edges = {}
            for i, label, typ in mat:
                val = row[i]
                if val is None:
                    continue
                key = (typ, val)
                aid = index.get(key)
                if aid is None:
                    aid = len(adj)
                    index[key] = aid
                    adj.append({})
                    g.rel_of.append(None)
                    g.data.append(None)
                    g.attr_key.append(key)
                edges[label] = [aid]
                peers = adj[aid].get(label)
                if peers is None:
                    adj[aid][label] = [tid]
                else:
                    peers.append(tid)
            adj[tid] = edges
            g.rel_of[tid] = name
            g.data[tid] = tuple(row)
            vids.append(tid)
        g.rel_tuples[name] = vids
    return g


class OverlayGraph(TagGraph):
    """A read-only view of a TagGraph plus virtual tuple vertices.

    Virtual relations hold intermediate results. Each virtual tuple is wired
    to the existing attribute vertices of its connecting values, so later
    vertex programs treat it like any stored relation.
    """

    def __init__(self, base: TagGraph):
        self.schema = base.schema
        self.base = base
        self.adj = list(base.adj)
        self.rel_of = list(base.rel_of)
        self.data = list(base.data)
        self.attr_key = list(base.attr_key)
        self.index = base.index
        self.rel_tuples = dict(base.rel_tuples)
        self.n_tuples = base.n_tuples
        self.virtual_types: dict[str, dict[str, str]] = {}
        self.virtual_columns: dict[str, tuple[str, ...]] = {}
        self._copied: set[int] = set()

    def add_relation(self, name: str, columns, rows, connect: dict[str, str]) -> list[int]:
        """Add virtual tuples; ``connect`` maps column name to value type.

        Edges are labeled ``name.column`` for each connected column.
        """
        if name in self.rel_tuples:
            raise SchemaError(f"relation {name!r} already exists")
        self.virtual_types[name] = dict(connect)
        self.virtual_columns[name] = tuple(columns)
        cols = list(columns)
        slots = [(cols.index(c), f"{name}.{c}", t) for c, t in connect.items()]
        vids = []
        for row in rows:
            tid = len(self.adj)
            edges = {}
            self.adj.append(edges)
            self.rel_of.append(name)
            self.data.append(tuple(row))
            self.attr_key.append(None)
            for i, label, typ in slots:
                val = row[i]
                if val is None:
                    continue
                aid = self.index.get((typ, val))
                if aid is None:
                    raise SchemaError(f"value {val!r} of type {typ} has no attribute vertex")
                edges[label] = [aid]
                if aid not in self._copied:
                    self.adj[aid] = {k: list(v) for k, v in self.adj[aid].items()}
                    self._copied.add(aid)
                self.adj[aid].setdefault(label, []).append(tid)
            vids.append(tid)
        self.rel_tuples[name] = vids
        return vids
