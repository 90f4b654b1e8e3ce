import json

import numpy as np
import pytest

from mwem.domain import AttributeSchema, Histogram, RecordTable, Universe, histogram_from_records
from mwem.errors import ConfigError, DomainError
from mwem.factored import FactoredDistribution
from mwem.io import (
    AttributeCodec,
    SchemaSpec,
    binarize,
    binary_width,
    decode_bits,
    encode_bits,
    export_synthetic,
    infer_schema,
    ingest_csv,
    load_schema,
    read_header,
    read_weighted,
    sample_records,
)

SCHEMA = {"attributes": [
    {"name": "color", "categories": ["red", "green", "blue"]},
    {"name": "age", "min": 18, "max": 21},
    {"name": "income", "bins": [0, 10, 50, 100]},
]}


@pytest.fixture
def files(tmp_path):
    (tmp_path / "schema.json").write_text(json.dumps(SCHEMA))
    (tmp_path / "data.csv").write_text(
        "# comment line\nage,color,income,extra\n18,red,5,x\n21,blue,100,y\n19,green,10,z\n")
    return tmp_path


def test_codecs():
    c = AttributeCodec.from_dict({"name": "x", "bins": 4, "min": 0, "max": 1})
    assert c.cardinality == 4 and c.encode("0.3") == 1 and c.encode("1") == 3
    assert c.decode(1) == "[0.25,0.5)"
    with pytest.raises(DomainError):
        c.encode("1.5")
    with pytest.raises(ConfigError):
        AttributeCodec.from_dict({"name": "x", "bins": [1, 0]})
    with pytest.raises(ConfigError):
        AttributeCodec.from_dict({"name": "x"})
    with pytest.raises(ConfigError):
        AttributeCodec.from_dict({"name": "x", "categories": ["a", "a"]})
    assert AttributeCodec.from_dict({"name": "x", "min": 3, "max": 5}).to_dict() == \
        {"name": "x", "min": 3, "max": 5}


def test_ingest_with_schema(files):
    spec = load_schema(files / "schema.json")
    table = ingest_csv(files / "data.csv", spec)
    assert table.schema == AttributeSchema(("color", "age", "income"), (3, 4, 3))
    assert table.rows.tolist() == [[0, 0, 0], [2, 3, 2], [1, 1, 1]]


def test_ingest_errors_name_row_and_column(files):
    (files / "bad.csv").write_text("age,color,income\n18,red,5\n30,red,5\n")
    with pytest.raises(DomainError, match="row 2.*age"):
        ingest_csv(files / "bad.csv", files / "schema.json")
    (files / "short.csv").write_text("age,color\n18,red\n")
    with pytest.raises(DomainError, match="income"):
        ingest_csv(files / "short.csv", files / "schema.json")


def test_infer_schema(files):
    spec = infer_schema(files / "data.csv")
    d = {c.name: c for c in spec.codecs}
    assert d["age"].cardinality == 22 and d["color"].categories == ["blue", "green", "red"]
    assert SchemaSpec.from_dict(spec.to_dict()).schema == spec.schema


def test_bits_round_trip():
    assert binary_width(2) == 1 and binary_width(5) == 3 and binary_width(8) == 3
    for v in range(8):
        assert decode_bits(encode_bits(v, 3)) == v
    assert encode_bits(6, 3) == [1, 1, 0]


def test_binarize_strategies():
    schema = AttributeSchema(("a", "b"), (3, 2))
    table = RecordTable(schema, [[0, 1], [2, 0]])
    log = binarize(table, "bitwise-log")
    assert log.schema.names == ("a.b0", "a.b1", "b.b0")
    assert log.rows.tolist() == [[0, 0, 1], [1, 0, 0]]
    hot = binarize(table, "one-hot")
    assert hot.schema.names == ("a=0", "a=1", "a=2", "b=0", "b=1")
    assert hot.rows.sum(axis=1).tolist() == [2, 2]
    with pytest.raises(ConfigError):
        binarize(table, "other")


def test_weighted_export_round_trip(files, rng):
    spec = load_schema(files / "schema.json")
    u = Universe(spec.schema)
    h = Histogram(u, rng.random(u.size) * 3)
    path = files / "syn.csv"
    export_synthetic(h, path, "weighted", meta={"seed": 4}, codecs=spec)
    assert read_header(path) == {"seed": 4}
    back = read_weighted(path, spec)
    assert np.allclose(back.weights, h.weights, rtol=1e-15)


def test_sampled_export(files, rng):
    schema = AttributeSchema.binary(3)
    h = Histogram(Universe(schema), [10.0, 0, 0, 0, 0, 0, 0, 30.0])
    path = files / "s.csv"
    export_synthetic(h, path, "sampled", rng=1)
    table = ingest_csv(path, schema)
    assert len(table) == 40
    assert set(map(tuple, table.rows.tolist())) <= {(0, 0, 0), (1, 1, 1)}
    with pytest.raises(ConfigError):
        export_synthetic(h, path, "other")


def test_sample_records_from_factored(rng):
    schema = AttributeSchema.binary(3)
    d = FactoredDistribution(schema, 20000.0, {(0, 1): [[0.5, 0.0], [0.0, 0.5]], (2,): [0.9, 0.1]})
    rows = sample_records(d, rng)
    assert rows.shape == (20000, 3)
    assert np.all(rows[:, 0] == rows[:, 1])
    assert rows[:, 2].mean() == pytest.approx(0.1, abs=0.01)
    assert histogram_from_records(RecordTable(schema, rows)).mass == 20000
