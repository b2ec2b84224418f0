"""Reproducible synthetic instances: schema, relation rows and a matching query."""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import GeneratorError
from .tag_store import Schema, write_csv

KINDS = ("star", "chain", "cycle", "pkfk-star", "pkfk-triangle", "worst-triangle")


@dataclass
class Instance:
    schema: Schema
    db: dict[str, list[tuple]]
    query: str

    @property
    def size(self) -> int:
        return sum(len(r) for r in self.db.values())


def _schema(rels) -> Schema:
    return Schema.from_dict({"relations": [
        {"name": name, "attrs": [{"name": a, "type": t} for a, t in attrs]} for name, attrs in rels]})


def _domain(sizes, domain):
    return domain if domain is not None else max(2, math.isqrt(max(sizes)))


def star(sizes, seed=0, domain=None) -> Instance:
    """R_i(X, Y_i): every relation joins on the shared hub variable X."""
    rnd = random.Random(seed)
    d = _domain(sizes, domain)
    rels, db, atoms = [], {}, []
    for i, n in enumerate(sizes, start=1):
        name = f"R{i}"
        rels.append((name, [("X", "int"), (f"Y{i}", "int")]))
        db[name] = [(rnd.randrange(d), rnd.randrange(n * 4 + 1)) for _ in range(n)]
        atoms.append(f"{name}(X, Y{i})")
    head = ["X"] + [f"Y{i}" for i in range(1, len(sizes) + 1)]
    return Instance(_schema(rels), db, f"Q({', '.join(head)}) :- {', '.join(atoms)}.")


def _path(sizes, seed, domain, closed) -> Instance:
    rnd = random.Random(seed)
    d = _domain(sizes, domain)
    n = len(sizes)
    rels, db, atoms = [], {}, []
    for i, m in enumerate(sizes, start=1):
        a, b = f"X{i}", f"X{i % n + 1}" if closed else f"X{i + 1}"
        name = f"R{i}"
        rels.append((name, [("A", "int"), ("B", "int")]))
        db[name] = [(rnd.randrange(d), rnd.randrange(d)) for _ in range(m)]
        atoms.append(f"{name}({a}, {b})")
    head = [f"X{i}" for i in range(1, n + (1 if closed else 2))]
    return Instance(_schema(rels), db, f"Q({', '.join(head)}) :- {', '.join(atoms)}.")


def chain(sizes, seed=0, domain=None) -> Instance:
    return _path(sizes, seed, domain, closed=False)


def cycle(sizes, seed=0, domain=None) -> Instance:
    if len(sizes) < 3:
        raise GeneratorError("a cycle needs at least three relations")
    return _path(sizes, seed, domain, closed=True)


def pkfk_star(sizes, seed=0, groups=None) -> Instance:
    """Fact(K1..Kk, P) with foreign keys into Dim_i(Ki, Ni); every join is key to foreign key.

    The query joins all relations and sums P per value of N1, aggregated at N1 vertices.
    """
    if len(sizes) < 2:
        raise GeneratorError("pkfk-star needs a fact size and at least one dimension size")
    rnd = random.Random(seed)
    fact, dims = sizes[0], sizes[1:]
    k = len(dims)
    rels, db = [], {}
    fact_attrs = [(f"K{i}", "int") for i in range(1, k + 1)] + [("P", "float")]
    rels.append(("Fact", fact_attrs))
    db["Fact"] = [tuple(rnd.randrange(d) for d in dims) + (round(rnd.uniform(1, 100), 2),) for _ in range(fact)]
    atoms = [f"Fact({', '.join(a for a, _ in fact_attrs)})"]
    for i, d in enumerate(dims, start=1):
        g = groups or max(1, min(25, d))
        rels.append((f"Dim{i}", [(f"K{i}", "int"), (f"N{i}", "string")]))
        db[f"Dim{i}"] = [(key, f"n{i}_{key % g}") for key in range(d)]
        atoms.append(f"Dim{i}(K{i}, N{i})")
    return Instance(_schema(rels), db, f"Q(N1, SUM(P)) :- {', '.join(atoms)} GROUP BY N1 LOCAL.")


def pkfk_triangle(sizes, seed=0) -> Instance:
    """R(A,B), S(B,C), T(C,A) where the first column of each relation is its key.

    R.B references S, S.C references T and T.A references R, so the output never
    exceeds the smallest relation. About half of the keys close a triangle.
    """
    rnd = random.Random(seed)
    m = sizes[0] if len(sizes) == 1 else min(sizes)
    db = {}
    for name, nxt in (("R", m), ("S", m), ("T", m)):
        rows = []
        for key in range(m):
            ref = key if key < m // 2 else rnd.randrange(nxt)
            rows.append((key, ref))
        db[name] = rows
    rels = [("R", [("A", "int"), ("B", "int")]), ("S", [("B", "int"), ("C", "int")]),
            ("T", [("C", "int"), ("A", "int")])]
    return Instance(_schema(rels), db, "Q(A, B, C) :- R(A, B), S(B, C), T(C, A).")


def worst_triangle(m: int, seed=0) -> Instance:
    """Each relation is a k-by-k grid (k = isqrt(m)) padded with non-joining tuples to exactly m rows.

    The triangle output is k**3, which equals m**1.5 when m is a perfect square.
    """
    if m < 1:
        raise GeneratorError("m must be positive")
    k = math.isqrt(m)
    grid = [(i, j) for i in range(k) for j in range(k)]
    pad = [(k + i, -(i + 1)) for i in range(m - k * k)]
    rels = [("R", [("A", "int"), ("B", "int")]), ("S", [("B", "int"), ("C", "int")]),
            ("T", [("C", "int"), ("A", "int")])]
    db = {"R": grid + pad, "S": grid + pad, "T": grid + pad}
    return Instance(_schema(rels), db, "Q(A, B, C) :- R(A, B), S(B, C), T(C, A).")


def generate(kind: str, sizes, seed: int = 0, domain: int | None = None) -> Instance:
    sizes = [int(s) for s in sizes]
    if not sizes or any(s <= 0 for s in sizes):
        raise GeneratorError("sizes must be positive")
    if kind == "star":
        return star(sizes, seed, domain)
    if kind == "chain":
        return chain(sizes, seed, domain)
    if kind == "cycle":
        return cycle(sizes, seed, domain)
    if kind == "pkfk-star":
        return pkfk_star(sizes, seed)
    if kind == "pkfk-triangle":
        return pkfk_triangle(sizes, seed)
    if kind == "worst-triangle":
        return worst_triangle(sizes[0], seed)
    raise GeneratorError(f"unknown generator {kind!r}; choose from {', '.join(KINDS)}")


def write_instance(inst: Instance, out_dir) -> Path:
    """Write schema.json, one CSV per relation and query.dl."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "schema.json").write_text(json.dumps(inst.schema.to_dict(), indent=1) + "\n", encoding="utf-8")
    for name, rel in inst.schema.relations.items():
        write_csv(out / f"{name}.csv", rel.attr_names, inst.db[name])
    (out / "query.dl").write_text(inst.query + "\n", encoding="utf-8")
    return out
