"""Selections, projections and aggregation helpers shared by the vertex programs.

Partial aggregates use one shape for every function: per group key a tuple
(rows, non-null count, sum, min, max). Floats are summed as Fractions so the
result does not depend on combine order.
"""
from __future__ import annotations

import logging
from fractions import Fraction

from .errors import FunctionTypeMismatch, UnknownVariable
from .query import Var
from .table import Table

log = logging.getLogger(__name__)

PARTIAL_COLS = ("#rows", "#nn", "#sum", "#min", "#max")
NUMERIC = ("int", "float")


def _lt(a, b):
    try:
        return a < b
    except TypeError:
        return False


def compile_filter(f, cols):
    """Turn a Filter into a predicate over rows laid out as ``cols``. Null never matches."""
    cols = tuple(cols)
    for v in f.vars:
        if v not in cols:
            raise UnknownVariable(f"filter {f} uses {v!r}, not among {list(cols)}")
    i = cols.index(f.lhs)
    op = f.op
    if op == "in":
        values = frozenset(f.rhs)
        return lambda r: r[i] is not None and r[i] in values
    if op == "range":
        lo, hi = f.rhs
        return lambda r: r[i] is not None and not _lt(r[i], lo) and not _lt(hi, r[i]) and _comparable(r[i], lo)
    if isinstance(f.rhs, Var):
        j = cols.index(f.rhs.name)
        get = lambda r: r[j]  # noqa: E731
    else:
        c = f.rhs
        get = lambda r: c  # noqa: E731
    if op == "=":
        return lambda r: r[i] is not None and r[i] == get(r)
    if op == "!=":
        return lambda r: r[i] is not None and get(r) is not None and r[i] != get(r)
    cmp = {"<": _lt, ">": lambda a, b: _lt(b, a),
           "<=": lambda a, b: _comparable(a, b) and not _lt(b, a),
           ">=": lambda a, b: _comparable(a, b) and not _lt(a, b)}[op]
    return lambda r: r[i] is not None and get(r) is not None and cmp(r[i], get(r))


def _comparable(a, b) -> bool:
    try:
        a < b
        return True
    except TypeError:
        return False


def value_filter(filters, var):
    """Predicate over a single value for the single-variable filters on ``var``."""
    preds = [compile_filter(f, (var,)) for f in filters if f.vars == (var,)]
    if not preds:
        return None
    return lambda x: all(p((x,)) for p in preds)


def check_aggregate_types(spec, arg_type) -> None:
    if spec.function in ("SUM", "AVG") and arg_type is not None and arg_type not in NUMERIC:
        raise FunctionTypeMismatch(f"{spec.function} over {arg_type} values")


def _unit(x):
    if x is None:
        return (1, 0, 0, None, None)
    s = Fraction(x) if isinstance(x, float) else x
    return (1, 1, s, x, x)


def combine_partial(a, b):
    rows, nn, s, lo, hi = a
    rows2, nn2, s2, lo2, hi2 = b
    if lo is None or (lo2 is not None and lo2 < lo):
        lo = lo2
    if hi is None or (hi2 is not None and hi2 > hi):
        hi = hi2
    if nn2:
        s = s + s2 if nn else s2
    return (rows + rows2, nn + nn2, s, lo, hi)


def scale_partial(p, k: int):
    """Partial aggregate of a bag repeated k times."""
    rows, nn, s, lo, hi = p
    return (rows * k, nn * k, s * k if nn else s, lo, hi)


def _exact_sum(values):
    """Exact sum of ints and floats; float denominators are powers of two, so one common scale suffices."""
    ints = 0
    ratios = []
    for x in values:
        if type(x) is float:
            ratios.append(x.as_integer_ratio())
        else:
            ints += x
    if not ratios:
        return ints
    den = max(d for _, d in ratios)
    return Fraction(sum(n * (den // d) for n, d in ratios), den) + ints


def partials_of(table: Table, group_by, arg) -> dict:
    gi = [table.cols.index(g) for g in group_by]
    ai = None if arg is None else table.cols.index(arg)
    groups: dict = {}
    for r in table.rows:
        key = tuple(r[i] for i in gi)
        val = None if ai is None else r[ai]
        g = groups.get(key)
        if g is None:
            groups[key] = [val]
        else:
            g.append(val)
    out: dict = {}
    for key, vals in groups.items():
        if ai is None:
            out[key] = (len(vals), len(vals), 0, None, None)
            continue
        present = [x for x in vals if x is not None]
        if not present:
            out[key] = (len(vals), 0, 0, None, None)
            continue
        has_float = any(type(x) is float for x in present)
        total = _exact_sum(present) if has_float else sum(present)
        out[key] = (len(vals), len(present), total, min(present), max(present))
    return out


def partial_table(partials: dict, group_by) -> Table:
    return Table(tuple(group_by) + PARTIAL_COLS, [k + p for k, p in partials.items()])


def merge_partial_tables(acc: dict, t: Table) -> dict:
    n = len(t.cols) - len(PARTIAL_COLS)
    for r in t.rows:
        key, p = r[:n], r[n:]
        acc[key] = combine_partial(acc[key], p) if key in acc else p
    return acc


def finalize(function: str, p, float_arg: bool, star: bool = False):
    rows, nn, s, lo, hi = p
    if function == "COUNT":
        return rows if star else nn
    if nn == 0:
        return None
    if function == "SUM":
        return float(s) if float_arg else s
    if function == "AVG":
        return float(Fraction(s) / nn)
    return lo if function == "MIN" else hi


def finalize_rows(spec, partials: dict, float_arg: bool, output_columns) -> list[tuple]:
    """Turn merged partials into output rows ordered as ``output_columns``."""
    if not partials and not spec.group_by:
        return [(0,)] if spec.function == "COUNT" else []
    cols = tuple(spec.group_by) + (spec.column,)
    idx = [cols.index(c) for c in output_columns]
    out = []
    for key, p in partials.items():
        full = key + (finalize(spec.function, p, float_arg, spec.arg is None),)
        out.append(tuple(full[i] for i in idx))
    return out


class PartialAggregator:
    """Keyed aggregator over partial tables; the combined value is a dict."""

    identity: dict = {}

    def __init__(self):
        self.identity = {}

    def combine(self, acc, item):
        return merge_partial_tables(dict(acc), item)

    def fold(self, values):
        acc: dict = {}
        for t in values:
            merge_partial_tables(acc, t)
        return acc


def warn_demotion(note_sink, value) -> None:
    msg = f"local aggregation demoted to global: group key value {value!r} does not determine the other keys"
    log.warning(msg)
    note_sink.append(msg)
