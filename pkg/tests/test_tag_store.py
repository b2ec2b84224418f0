import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagjoin.errors import HeaderMismatch, SchemaError, StoreIoError, TypeParseError, UnknownVertex
from tagjoin.tag_store import OverlayGraph, Schema, build_tag, load_csv, load_database, load_schema, write_csv


def _schema(rels):
    return Schema.from_dict({"relations": [
        {"name": n, "attrs": [{"name": a, "type": t} for a, t in attrs]} for n, attrs in rels]})


def test_i1_counts(i1):
    _, db, g = i1
    assert g.n_tuples == 8
    values = {v for rows in db.values() for r in rows for v in r}
    assert g.n_vertices - g.n_tuples == len(values)
    assert g.edge_count() == 16


def test_i1_degrees(i1):
    _, _, g = i1
    b1 = g.attr_vertex("string", "b1")
    assert g.degree(b1, "R.B") == 3
    assert g.degree(b1, "S.B") == 3
    assert g.degree(b1, "T.B") == 0
    with pytest.raises(UnknownVertex):
        g.degree(10_000, "R.B")


def test_single_tuple_minimal_graph():
    g = build_tag(_schema([("R", [("A", "string"), ("B", "string")])]), {"R": [("a1", "b1")]})
    assert (g.n_tuples, g.n_vertices, g.edge_count()) == (1, 3, 2)


def test_shared_value_across_five_labels():
    schema = _schema([
        ("NATION", [("N_NATIONKEY", "int"), ("N_REGIONKEY", "int")]),
        ("CUSTOMER", [("C_CUSTKEY", "int"), ("C_NATIONKEY", "int")]),
        ("ORDERS", [("O_ORDERKEY", "int"), ("O_CUSTKEY", "int")]),
    ])
    g = build_tag(schema, {"NATION": [(2, 2)], "CUSTOMER": [(2, 2)], "ORDERS": [(2, 7)]})
    two = g.attr_vertex("int", 2)
    labels = {lab: len(peers) for lab, peers in g.adj[two].items()}
    assert labels == {"NATION.N_NATIONKEY": 1, "NATION.N_REGIONKEY": 1, "CUSTOMER.C_CUSTKEY": 1,
                      "CUSTOMER.C_NATIONKEY": 1, "ORDERS.O_ORDERKEY": 1}


def test_typed_values_are_distinct_vertices():
    schema = _schema([("R", [("A", "int")]), ("S", [("A", "string")])])
    g = build_tag(schema, {"R": [(2,)], "S": [("2",)]})
    assert g.attr_vertex("int", 2) != g.attr_vertex("string", "2")


def test_nulls_and_unmaterialized_columns_create_no_edges():
    schema = _schema([("R", [("A", "int"), ("P", "float"), ("T", "text")])])
    g = build_tag(schema, {"R": [(None, 1.5, "x"), (3, None, None)]})
    assert g.edge_count() == 1
    assert g.n_vertices == 3
    assert g.data[0] == (None, 1.5, "x")


def test_duplicates_get_fresh_vertices():
    g = build_tag(_schema([("R", [("A", "int")])]), {"R": [(1,), (1,)]})
    assert g.n_tuples == 2
    assert g.degree(g.attr_vertex("int", 1), "R.A") == 2


def test_schema_errors():
    with pytest.raises(SchemaError):
        _schema([("R", [("A", "int")]), ("R", [("B", "int")])])
    with pytest.raises(SchemaError):
        _schema([("R", [("A", "int"), ("A", "int")])])
    with pytest.raises(SchemaError):
        _schema([("R", [("A", "blob")])])


def test_schema_round_trip(tmp_path):
    schema = _schema([("R", [("A", "int"), ("D", "date"), ("F", "float")])])
    assert schema["R"].attrs[2].materialize is False
    p = tmp_path / "schema.json"
    import json
    p.write_text(json.dumps(schema.to_dict()))
    assert load_schema(p) == schema
    with pytest.raises(StoreIoError):
        load_schema(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(SchemaError):
        load_schema(tmp_path / "bad.json")


def test_load_csv(tmp_path):
    schema = _schema([("R", [("A", "int"), ("B", "string"), ("D", "date"), ("F", "float")])])
    p = tmp_path / "R.csv"
    p.write_text('A,B,D,F\n1,"x,y",2024-01-02,1.5\n1,"x,y",2024-01-02,1.5\n,,,\n')
    rows = load_csv(schema, "R", p)
    assert rows == [(1, "x,y", "2024-01-02", 1.5), (1, "x,y", "2024-01-02", 1.5), (None, None, None, None)]
    p.write_text("A,B,D,F\n")
    assert load_csv(schema, "R", p) == []


def test_load_csv_errors(tmp_path):
    schema = _schema([("R", [("A", "int"), ("B", "string")])])
    p = tmp_path / "R.csv"
    p.write_text("B,A\n1,x\n")
    with pytest.raises(HeaderMismatch):
        load_csv(schema, "R", p)
    p.write_text("A,B\n1\n")
    with pytest.raises(HeaderMismatch):
        load_csv(schema, "R", p)
    p.write_text("A,B\n1,x\nzz,y\n")
    with pytest.raises(TypeParseError) as exc:
        load_csv(schema, "R", p)
    assert (exc.value.row, exc.value.column) == (2, "A")
    with pytest.raises(StoreIoError):
        load_csv(schema, "R", tmp_path / "none.csv")
    with pytest.raises(StoreIoError):
        load_database(schema, tmp_path / "nodir")


def test_overlay_adds_virtual_tuples(i1):
    _, _, g = i1
    ov = OverlayGraph(g)
    vids = ov.add_relation("V", ("B", "Z"), [("b1", 1), ("b2", 2)], {"B": "string"})
    b1 = g.attr_vertex("string", "b1")
    assert ov.degree(b1, "V.B") == 1
    assert g.degree(b1, "V.B") == 0
    assert ov.rel_of[vids[0]] == "V"
    with pytest.raises(SchemaError):
        ov.add_relation("W", ("B",), [("zz",)], {"B": "string"})
    with pytest.raises(SchemaError):
        ov.add_relation("V", ("B",), [], {})


cells = st.one_of(st.none(), st.integers(-3, 3))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(cells, cells), max_size=10), st.lists(st.tuples(cells, st.sampled_from(["a", "b", None])),
                                                                 max_size=10))
def test_graph_invariants(r_rows, s_rows):
    schema = _schema([("R", [("A", "int"), ("B", "int")]), ("S", [("B", "int"), ("C", "string")])])
    db = {"R": r_rows, "S": s_rows}
    g = build_tag(schema, db)
    # lossless round trip
    assert g.relation_rows("R") == r_rows and g.relation_rows("S") == s_rows
    # bipartite; one labeled edge per non-null materialized cell, mirrored at the attribute vertex
    cells_n = sum(v is not None for rows in db.values() for r in rows for v in r)
    assert g.edge_count() == cells_n
    for v in range(g.n_tuples):
        for label, peers in g.adj[v].items():
            assert len(peers) == 1 and not g.is_tuple(peers[0])
            assert v in g.adj[peers[0]][label]
    for v in range(g.n_tuples, g.n_vertices):
        assert all(g.is_tuple(p) for peers in g.adj[v].values() for p in peers)
    # index consistency and linear size
    for (typ, val), aid in g.index.items():
        assert g.attr_key[aid] == (typ, val)
    total_cells = sum(len(r) for rows in db.values() for r in rows)
    assert g.n_vertices + g.edge_count() <= 2 * total_cells + g.n_tuples


def test_write_csv_round_trip(tmp_path):
    schema = _schema([("R", [("A", "int"), ("F", "float"), ("S", "string")])])
    rows = [(1, 0.1, "a b"), (None, None, None)]
    write_csv(tmp_path / "R.csv", ("A", "F", "S"), rows)
    assert load_csv(schema, "R", tmp_path / "R.csv") == rows
