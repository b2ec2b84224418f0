import math

import pytest

from tagjoin import gen, oracle
from tagjoin.errors import GeneratorError
from tagjoin.query import parse
from tagjoin.tag_store import load_database, load_schema


@pytest.mark.parametrize("kind,sizes", [("star", [20, 30]), ("chain", [10, 10, 10]), ("cycle", [8, 8, 8, 8]),
                                        ("pkfk-star", [50, 5, 6]), ("pkfk-triangle", [12]),
                                        ("worst-triangle", [10])])
def test_generators_are_deterministic_and_parse(kind, sizes):
    a = gen.generate(kind, sizes, seed=3)
    b = gen.generate(kind, sizes, seed=3)
    assert a.db == b.db and a.query == b.query
    q = parse(a.query, a.schema)
    assert {x.relation for x in q.atoms} == set(a.db)


def test_seed_changes_data():
    assert gen.generate("chain", [30, 30], seed=1).db != gen.generate("chain", [30, 30], seed=2).db


@pytest.mark.parametrize("m", [1, 8, 16, 17, 100])
def test_worst_triangle_sizes(m):
    inst = gen.worst_triangle(m)
    assert all(len(r) == m for r in inst.db.values())
    out = len(oracle.nl_join(parse(inst.query).atoms, inst.db).rows)
    assert out == math.isqrt(m) ** 3


def test_pkfk_star_keys_resolve():
    inst = gen.pkfk_star([200, 7, 9, 11], seed=5)
    for i, d in enumerate((7, 9, 11), start=1):
        assert [k for k, _ in inst.db[f"Dim{i}"]] == list(range(d))
        assert all(0 <= row[i - 1] < d for row in inst.db["Fact"])
    q = parse(inst.query, inst.schema)
    assert q.aggregate.kind == "local"
    join = oracle.nl_join(q.atoms, inst.db)
    assert len(join.rows) == 200


def test_pkfk_triangle_output_bounded_by_smallest():
    inst = gen.pkfk_triangle([40], seed=2)
    out = len(oracle.nl_join(parse(inst.query).atoms, inst.db).rows)
    assert 20 <= out <= 40


@pytest.mark.parametrize("kind,sizes", [("nope", [3]), ("chain", [0]), ("cycle", [3, 3]), ("pkfk-star", [10]),
                                        ("chain", [])])
def test_generator_errors(kind, sizes):
    with pytest.raises(GeneratorError):
        gen.generate(kind, sizes)


def test_write_instance_round_trip(tmp_path):
    inst = gen.generate("star", [5, 6], seed=1)
    out = gen.write_instance(inst, tmp_path / "star")
    schema = load_schema(out / "schema.json")
    assert schema == inst.schema
    assert load_database(schema, out) == inst.db
    assert (out / "query.dl").read_text().strip() == inst.query
