"""Conjunctive-query DSL.

    Q(A, C) :- R(A, B), S(B, C), A < C.
    Q(N, SUM(P)) :- O(K, N, P), L(K, X), X IN (1, 2) GROUP BY N LOCAL.
    Q(A, B) :- R(A, B), ANTI S(B, C).
    Q(A) :- R(A, B), NOT EXISTS { S(B, C), C > 3 }.

Atoms bind variables positionally to the relation's attributes; ``_`` is a
fresh variable. Shared variables are equi-join conditions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import count
from typing import Any

from .errors import (
    QuerySyntaxError,
    UnboundVariable,
    UncorrelatedBlock,
    UnknownRelation,
)

JOIN_KINDS = ("inner", "left", "right", "full", "semi", "anti")
AGG_FUNCS = ("SUM", "COUNT", "MIN", "MAX", "AVG")
AGG_KINDS = ("local", "global", "scalar")
COMPARISONS = ("<", "<=", "=", ">=", ">", "!=")


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Atom:
    relation: str
    vars: tuple[str, ...]
    join_kind: str = "inner"

    @property
    def var_set(self) -> frozenset:
        return frozenset(self.vars)

    def distinct_vars(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.vars))

    def __str__(self):
        prefix = "" if self.join_kind == "inner" else self.join_kind.upper() + " "
        return f"{prefix}{self.relation}({', '.join(self.vars)})"


@dataclass(frozen=True)
class Filter:
    """``lhs op rhs``; rhs is a Var, a constant, a tuple (IN) or a (lo, hi) pair (range)."""
    op: str
    lhs: str
    rhs: Any

    @property
    def vars(self) -> tuple[str, ...]:
        if isinstance(self.rhs, Var) and self.rhs.name != self.lhs:
            return (self.lhs, self.rhs.name)
        return (self.lhs,)

    def __str__(self):
        if self.op == "in":
            return f"{self.lhs} IN ({', '.join(map(repr, self.rhs))})"
        if self.op == "range":
            return f"{self.lhs} BETWEEN {self.rhs[0]!r} AND {self.rhs[1]!r}"
        rhs = self.rhs.name if isinstance(self.rhs, Var) else repr(self.rhs)
        return f"{self.lhs} {self.op} {rhs}"


@dataclass(frozen=True)
class AggregateSpec:
    function: str
    arg: str | None
    group_by: tuple[str, ...] = ()
    kind: str = "scalar"
    eager: bool = False

    @property
    def column(self) -> str:
        return f"{self.function}({self.arg or '*'})"


@dataclass(frozen=True)
class ExistsBlock:
    atoms: tuple[Atom, ...]
    filters: tuple[Filter, ...]
    negated: bool
    correlation: tuple[str, ...]


@dataclass
class QuerySpec:
    name: str
    head: tuple  # variable names and at most one AggregateSpec
    atoms: tuple[Atom, ...]
    filters: tuple[Filter, ...] = ()
    aggregate: AggregateSpec | None = None
    exists: tuple[ExistsBlock, ...] = ()
    text: str = ""

    @property
    def head_vars(self) -> tuple[str, ...]:
        return tuple(h for h in self.head if isinstance(h, str))

    @property
    def output_columns(self) -> tuple[str, ...]:
        return tuple(h if isinstance(h, str) else h.column for h in self.head)

    @property
    def variables(self) -> tuple[str, ...]:
        seen = {}
        for a in self.atoms:
            for v in a.vars:
                seen.setdefault(v, None)
        return tuple(seen)

    def join_kind(self) -> str:
        kinds = {a.join_kind for a in self.atoms} - {"inner"}
        return kinds.pop() if kinds else "inner"

    def with_atoms(self, atoms) -> "QuerySpec":
        return QuerySpec(self.name, self.head, tuple(atoms), self.filters,
                         self.aggregate, self.exists, self.text)


_TOKEN = re.compile(r"""
    (?P<ws>\s+|%[^\n]*)
  | (?P<turnstile>:-)
  | (?P<op><=|>=|!=|<>|≤|≥|≠|<|>|=)
  | (?P<float>-?\d+\.\d+(?:[eE][-+]?\d+)?)
  | (?P<int>-?\d+)
  | (?P<str>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),.{}*])
""", re.VERBOSE)

_OP_ALIASES = {"≤": "<=", "≥": ">=", "≠": "!=", "<>": "!="}
_PREFIXES = {"LEFT", "RIGHT", "FULL", "SEMI", "ANTI"}


@dataclass
class _Tok:
    kind: str
    text: str
    value: Any
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        raw = m.group()
        col = pos - line_start + 1
        if kind != "ws":
            if kind == "int":
                value = int(raw)
            elif kind == "float":
                value = float(raw)
            elif kind == "str":
                value = bytes(raw[1:-1], "utf-8").decode("unicode_escape")
            elif kind == "op":
                value = _OP_ALIASES.get(raw, raw)
            else:
                value = raw
            toks.append(_Tok(kind, raw, value, line, col))
        for i, ch in enumerate(raw):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = m.end()
    toks.append(_Tok("eof", "", None, line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.fresh = count(1)

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        found = tok.text or "end of input"
        return QuerySyntaxError(f"{msg}, found {found!r}", tok.line, tok.col)

    def accept(self, text: str) -> bool:
        if self.tok.text == text and self.tok.kind in ("punct", "turnstile", "op", "name"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> _Tok:
        tok = self.tok
        if not self.accept(text):
            raise self.error(f"expected {text!r}")
        return tok

    def name(self, what: str) -> _Tok:
        tok = self.tok
        if tok.kind != "name":
            raise self.error(f"expected {what}")
        self.i += 1
        return tok

    def var(self) -> str:
        tok = self.name("variable")
        if tok.value == "_":
            return f"_{next(self.fresh)}"
        return tok.value

    def constant(self):
        tok = self.tok
        if tok.kind in ("int", "float", "str"):
            self.i += 1
            return tok.value
        raise self.error("expected a constant")

    def parse(self):
        head_name = self.name("query name")
        self.expect("(")
        head = []
        positions = {}
        if not self.accept(")"):
            while True:
                tok = self.tok
                if tok.kind == "name" and tok.value.upper() in AGG_FUNCS and self.peek().text == "(":
                    self.i += 2
                    arg = None if self.accept("*") else self.var()
                    self.expect(")")
                    head.append((tok.value.upper(), arg))
                else:
                    v = self.var()
                    head.append(v)
                positions[len(head) - 1] = tok
                if self.accept(")"):
                    break
                self.expect(",")
        self.expect(":-")
        atoms, filters, blocks = self.body(top=True)
        group_by, kind, eager = (), None, False
        if self.tok.kind == "name" and self.tok.value.upper() == "GROUP":
            self.i += 1
            if not (self.tok.kind == "name" and self.tok.value.upper() == "BY"):
                raise self.error("expected BY")
            self.i += 1
            group_by = [self.var()]
            while self.accept(","):
                group_by.append(self.var())
            if self.tok.kind == "name" and self.tok.value.upper() in ("LOCAL", "GLOBAL", "SCALAR"):
                kind = self.tok.value.lower()
                self.i += 1
        if self.tok.kind == "name" and self.tok.value.upper() == "EAGER":
            eager = True
            self.i += 1
        self.expect(".")
        if self.tok.kind != "eof":
            raise self.error("expected end of query")
        return head_name, head, positions, atoms, filters, blocks, tuple(group_by), kind, eager

    def body(self, top: bool):
        atoms, filters, blocks = [], [], []
        while True:
            tok = self.tok
            if tok.kind != "name":
                raise self.error("expected an atom, filter or EXISTS block")
            word = tok.value.upper()
            if word in ("EXISTS", "NOT") and top and (
                    self.peek().text == "{" or (word == "NOT" and self.peek().text.upper() == "EXISTS")):
                negated = word == "NOT"
                self.i += 2 if negated else 1
                self.expect("{")
                b_atoms, b_filters, _ = self.body(top=False)
                self.expect("}")
                blocks.append((b_atoms, b_filters, negated, tok))
            elif word in _PREFIXES and self.peek().kind == "name" and self.peek(2).text == "(":
                self.i += 1
                atoms.append((self.atom(word.lower()), tok))
            elif self.peek().text == "(":
                atoms.append((self.atom("inner"), tok))
            else:
                filters.append((self.filter(), tok))
            if not self.accept(","):
                return atoms, filters, blocks

    def atom(self, kind: str) -> Atom:
        rel = self.name("relation name").value
        self.expect("(")
        terms = [self.var()]
        while self.accept(","):
            terms.append(self.var())
        self.expect(")")
        return Atom(rel, tuple(terms), kind)

    def filter(self) -> Filter:
        lhs = self.var()
        tok = self.tok
        if tok.kind == "name" and tok.value.upper() == "IN":
            self.i += 1
            self.expect("(")
            vals = [self.constant()]
            while self.accept(","):
                vals.append(self.constant())
            self.expect(")")
            return Filter("in", lhs, tuple(vals))
        if tok.kind == "name" and tok.value.upper() == "BETWEEN":
            self.i += 1
            lo = self.constant()
            if not (self.tok.kind == "name" and self.tok.value.upper() == "AND"):
                raise self.error("expected AND")
            self.i += 1
            hi = self.constant()
            return Filter("range", lhs, (lo, hi))
        if tok.kind != "op":
            raise self.error("expected a comparison operator")
        self.i += 1
        if self.tok.kind == "name":
            return Filter(tok.value, lhs, Var(self.var()))
        return Filter(tok.value, lhs, self.constant())


def parse(text: str, schema=None) -> QuerySpec:
    """Parse DSL text. With a schema, relation names and arities are checked."""
    p = _Parser(text)
    name_tok, head, positions, atoms, filters, blocks, group_by, kind, eager = p.parse()
    atom_list = [a for a, _ in atoms]
    if not atom_list:
        raise QuerySyntaxError("query needs at least one atom", name_tok.line, name_tok.col)
    if schema is not None:
        for a, tok in atoms + [x for b in blocks for x in b[0]]:
            if a.relation not in schema:
                raise UnknownRelation(f"unknown relation {a.relation!r} at line {tok.line}, column {tok.col}")
            arity = len(schema[a.relation].attrs)
            if len(a.vars) != arity:
                raise QuerySyntaxError(
                    f"{a.relation} has {arity} attributes but {len(a.vars)} terms were given",
                    tok.line, tok.col)
    outer_vars = {v for a in atom_list for v in a.vars}
    visible = {v for a in atom_list if a.join_kind not in ("semi", "anti") for v in a.vars}
    for f, tok in filters:
        for v in f.vars:
            if v not in outer_vars:
                raise UnboundVariable(f"variable {v!r} at line {tok.line}, column {tok.col} is not bound by an atom")

    exists = []
    for b_atoms, b_filters, negated, tok in blocks:
        inner = {v for a, _ in b_atoms for v in a.vars}
        for f, ftok in b_filters:
            for v in f.vars:
                if v not in inner and v not in outer_vars:
                    raise UnboundVariable(f"variable {v!r} at line {ftok.line}, column {ftok.col} is not bound")
        corr = tuple(v for v in dict.fromkeys(v for a, _ in b_atoms for v in a.vars) if v in outer_vars)
        if not corr:
            raise UncorrelatedBlock(
                f"EXISTS block at line {tok.line}, column {tok.col} shares no variable with the outer query")
        exists.append(ExistsBlock(tuple(a for a, _ in b_atoms), tuple(f for f, _ in b_filters), negated, corr))

    aggregate = None
    head_items = []
    aggs = [(i, h) for i, h in enumerate(head) if isinstance(h, tuple)]
    if len(aggs) > 1:
        tok = positions[aggs[1][0]]
        raise QuerySyntaxError("at most one aggregate is allowed", tok.line, tok.col)
    if aggs:
        func, arg = aggs[0][1]
        if kind is None:
            kind = "global" if group_by else "scalar"
        if kind == "scalar" and group_by:
            raise QuerySyntaxError("SCALAR aggregation cannot have GROUP BY", name_tok.line, name_tok.col)
        if kind != "scalar" and not group_by:
            raise QuerySyntaxError(f"{kind.upper()} aggregation needs GROUP BY", name_tok.line, name_tok.col)
        aggregate = AggregateSpec(func, arg, group_by, kind, eager)
    elif group_by:
        raise QuerySyntaxError("GROUP BY without an aggregate", name_tok.line, name_tok.col)
    for i, h in enumerate(head):
        if isinstance(h, tuple):
            head_items.append(aggregate)
            if h[1] is not None and h[1] not in visible:
                tok = positions[i]
                raise UnboundVariable(f"variable {h[1]!r} at line {tok.line}, column {tok.col} is not bound")
        else:
            if h not in visible:
                tok = positions[i]
                raise UnboundVariable(f"variable {h!r} at line {tok.line}, column {tok.col} is not bound by an atom")
            head_items.append(h)
    if aggregate is not None:
        plain = [h for h in head_items if isinstance(h, str)]
        if set(plain) != set(group_by):
            raise QuerySyntaxError("head variables must equal the GROUP BY variables",
                                   name_tok.line, name_tok.col)
    return QuerySpec(name_tok.value, tuple(head_items), tuple(atom_list), tuple(f for f, _ in filters),
                     aggregate, tuple(exists), text)


def eval_filter(f: Filter, env: dict) -> bool:
    """SQL-style evaluation: any comparison involving null is false."""
    x = env[f.lhs]
    if x is None:
        return False
    if f.op == "in":
        return x in f.rhs
    if f.op == "range":
        return f.rhs[0] <= x <= f.rhs[1]
    y = env[f.rhs.name] if isinstance(f.rhs, Var) else f.rhs
    if y is None:
        return False
    op = f.op
    if op == "=":
        return x == y
    if op == "!=":
        return x != y
    try:
        if op == "<":
            return x < y
        if op == "<=":
            return x <= y
        if op == ">":
            return x > y
        return x >= y
    except TypeError:
        return False
