"""Bag-semantics tables carried in messages and stored at vertices."""
from __future__ import annotations

from itertools import chain


class Table:
    __slots__ = ("cols", "rows", "tag")

    def __init__(self, cols, rows=None, tag=None):
        self.cols = tuple(cols)
        self.rows = [] if rows is None else rows
        self.tag = tag

    def __len__(self):
        return len(self.rows)

    def __repr__(self):
        return f"Table({self.cols}, {len(self.rows)} rows)"

    def __eq__(self, other):
        if not isinstance(other, Table):
            return NotImplemented
        return self.cols == other.cols and sorted_rows(self.rows) == sorted_rows(other.rows)

    @property
    def cells(self) -> int:
        return len(self.cols) * len(self.rows)

    def select_cols(self, cols) -> "Table":
        idx = [self.cols.index(c) for c in cols]
        return Table(cols, [tuple(r[i] for i in idx) for r in self.rows], self.tag)


def value_key(v):
    """Total order over typed values; null sorts first."""
    if v is None:
        return (0, 0)
    if isinstance(v, bool):
        return (1, int(v))
    if isinstance(v, (int, float)):
        return (1, v)
    return (2, str(v))


def row_key(row):
    return tuple(value_key(v) for v in row)


def sorted_rows(rows):
    return sorted(rows, key=row_key)


def union(tables, cols=None) -> Table:
    tables = [t for t in tables if t is not None]
    if cols is None:
        if not tables:
            return Table(())
        cols = tables[0].cols
    cols = tuple(cols)
    parts = []
    for t in tables:
        if t.cols == cols:
            parts.append(t.rows)
        else:
            idx = [t.cols.index(c) for c in cols]
            parts.append([tuple(r[i] for i in idx) for r in t.rows])
    return Table(cols, list(chain.from_iterable(parts)))


def natural_join(a: Table, b: Table) -> Table:
    common = [c for c in a.cols if c in b.cols]
    extra = [i for i, c in enumerate(b.cols) if c not in a.cols]
    cols = a.cols + tuple(b.cols[i] for i in extra)
    if not a.rows or not b.rows:
        return Table(cols)
    ai = [a.cols.index(c) for c in common]
    bi = [b.cols.index(c) for c in common]
    index: dict = {}
    for r in b.rows:
        key = tuple(r[i] for i in bi)
        if None not in key:
            index.setdefault(key, []).append(tuple(r[i] for i in extra))
    out = []
    for r in a.rows:
        for tail in index.get(tuple(r[i] for i in ai), ()):
            out.append(r + tail)
    return Table(cols, out)


def join_row(t: Table, cols, row) -> Table:
    """Join a table with a single row; the common fast path at tuple vertices."""
    pos = {c: i for i, c in enumerate(cols)}
    checks = [(t.cols.index(c), pos[c]) for c in t.cols if c in pos]
    extra_cols = tuple(c for c in cols if c not in t.cols)
    tail = tuple(row[pos[c]] for c in extra_cols)
    out = []
    for r in t.rows:
        for i, j in checks:
            if r[i] != row[j] or r[i] is None:
                break
        else:
            out.append(r + tail)
    return Table(t.cols + extra_cols, out)


def project(t: Table, keep) -> Table:
    keep = tuple(c for c in t.cols if c in keep)
    if keep == t.cols:
        return t
    return t.select_cols(keep)


def product(a: Table, b: Table) -> Table:
    return Table(a.cols + b.cols, [x + y for x in a.rows for y in b.rows])
