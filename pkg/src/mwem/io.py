"""CSV ingestion, schema declarations, binarization and synthetic-data export.

A schema file is JSON: ``{"attributes": [...]}`` where each attribute is one of

* ``{"name": "a", "cardinality": 5}`` -- integer codes 0..4
* ``{"name": "a", "min": 17, "max": 90}`` -- integers, coded as value - min
* ``{"name": "a", "categories": ["x", "y"]}`` -- labels, coded by position
* ``{"name": "a", "bins": [0, 10, 20, 50]}`` -- numbers, coded by the half-open
  bin [edge_i, edge_i+1) they fall in; the last bin is closed
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import AttributeSchema, Histogram, RecordTable, Universe, indices_of
from .errors import ConfigError, DomainError
from .mech import make_rng

HEADER_PREFIX = "# "


@dataclass
class AttributeCodec:
    name: str
    cardinality: int
    offset: int = 0
    categories: list | None = None
    bins: list | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeCodec":
        if "name" not in d:
            raise ConfigError(f"schema attribute without a name: {d}")
        name = str(d["name"])
        if "categories" in d:
            cats = [str(c) for c in d["categories"]]
            if len(set(cats)) != len(cats):
                raise ConfigError(f"repeated category for attribute {name!r}")
            return cls(name, len(cats), categories=cats)
        if "bins" in d:
            if isinstance(d["bins"], int):
                if "min" not in d or "max" not in d:
                    raise ConfigError(f"a bin count for {name!r} needs min and max")
                edges = np.linspace(float(d["min"]), float(d["max"]), d["bins"] + 1).tolist()
            else:
                edges = [float(e) for e in d["bins"]]
            if len(edges) < 3 or any(b <= a for a, b in zip(edges, edges[1:])):
                raise ConfigError(f"bins for {name!r} must be increasing with at least two bins")
            return cls(name, len(edges) - 1, bins=edges)
        if "min" in d and "max" in d:
            lo, hi = int(d["min"]), int(d["max"])
            return cls(name, hi - lo + 1, offset=lo)
        if "cardinality" in d:
            return cls(name, int(d["cardinality"]))
        raise ConfigError(f"attribute {name!r} needs cardinality, min/max, categories or bins")

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.categories is not None:
            d["categories"] = self.categories
        elif self.bins is not None:
            d["bins"] = self.bins
        elif self.offset:
            d["min"], d["max"] = self.offset, self.offset + self.cardinality - 1
        else:
            d["cardinality"] = self.cardinality
        return d

    def encode(self, raw: str) -> int:
        raw = raw.strip()
        if self.categories is not None:
            try:
                return self.categories.index(raw)
            except ValueError:
                raise DomainError(f"unknown category {raw!r}") from None
        if self.bins is not None:
            v = float(raw)
            edges = self.bins
            if not edges[0] <= v <= edges[-1]:
                raise DomainError(f"value {v} outside the bins [{edges[0]}, {edges[-1]}]")
            return min(int(np.searchsorted(edges, v, side="right")) - 1, self.cardinality - 1)
        v = float(raw)
        if v != int(v):
            raise DomainError(f"value {raw!r} is not an integer")
        code = int(v) - self.offset
        if not 0 <= code < self.cardinality:
            raise DomainError(
                f"value {int(v)} out of range [{self.offset}, {self.offset + self.cardinality - 1}]"
            )
        return code

    def decode(self, code: int) -> str:
        if self.categories is not None:
            return self.categories[code]
        if self.bins is not None:
            return f"[{self.bins[code]:.12g},{self.bins[code + 1]:.12g})"
        return str(code + self.offset)


@dataclass
class SchemaSpec:
    codecs: list = field(default_factory=list)

    @property
    def schema(self) -> AttributeSchema:
        return AttributeSchema(tuple(c.name for c in self.codecs),
                               tuple(c.cardinality for c in self.codecs))

    def to_dict(self) -> dict:
        return {"attributes": [c.to_dict() for c in self.codecs]}

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaSpec":
        attrs = d.get("attributes") if isinstance(d, dict) else d
        if not attrs:
            raise ConfigError("a schema needs a non-empty 'attributes' list")
        return cls([AttributeCodec.from_dict(a) for a in attrs])

    @classmethod
    def plain(cls, schema: AttributeSchema) -> "SchemaSpec":
        return cls([AttributeCodec(n, c) for n, c in zip(schema.names, schema.cardinalities)])


def as_spec(schema) -> SchemaSpec:
    """Coerce a SchemaSpec, an AttributeSchema or a schema file path to a SchemaSpec."""
    if isinstance(schema, (str, Path)):
        return load_schema(schema)
    if isinstance(schema, AttributeSchema):
        return SchemaSpec.plain(schema)
    return schema


def load_schema(path) -> SchemaSpec:
    try:
        return SchemaSpec.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as e:
        raise ConfigError(f"schema file {path}: {e}") from None


def infer_schema(path) -> SchemaSpec:
    """Integer columns with nonnegative values become codes 0..max; anything else, categories."""
    with open(path, newline="") as f:
        reader = csv.reader(_data_lines(f))
        header = next(reader, None)
        if not header:
            raise DomainError(f"{path}: missing header row")
        columns = [set() for _ in header]
        for row in reader:
            for c, v in zip(columns, row):
                c.add(v.strip())
    codecs = []
    for name, values in zip(header, columns):
        name = name.strip()
        try:
            ints = sorted({int(v) for v in values})
        except ValueError:
            ints = None
        if ints is not None and ints and ints[0] >= 0:
            codecs.append(AttributeCodec(name, max(ints[-1] + 1, 2)))
        else:
            cats = sorted(values)
            if len(cats) < 2:
                cats = cats + [f"<unused{i}>" for i in range(2 - len(cats))]
            codecs.append(AttributeCodec(name, len(cats), categories=cats))
    return SchemaSpec(codecs)


def _data_lines(f):
    for line in f:
        if not line.startswith("#"):
            yield line


def ingest_csv(path, schema) -> RecordTable:
    """Read a CSV with a header row into integer-coded records.

    ``schema`` is a :class:`SchemaSpec`, an :class:`AttributeSchema` (integer
    codes), or a path to a schema file.  Extra columns are ignored.
    """
    schema = as_spec(schema)
    with open(path, newline="") as f:
        reader = csv.reader(_data_lines(f))
        header = next(reader, None)
        if not header:
            raise DomainError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        cols = []
        for c in schema.codecs:
            if c.name not in header:
                raise DomainError(f"{path}: missing column {c.name!r}")
            cols.append(header.index(c.name))
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DomainError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
            out = []
            for c, k in zip(schema.codecs, cols):
                try:
                    out.append(c.encode(row[k]))
                except (DomainError, ValueError) as e:
                    raise DomainError(f"{path}: row {r}, attribute {c.name!r}: {e}") from None
            rows.append(out)
    return RecordTable(schema.schema, np.array(rows, dtype=np.int64).reshape(-1, len(cols)))


def binary_width(cardinality: int) -> int:
    return max(1, math.ceil(math.log2(cardinality)))


def encode_bits(value: int, width: int) -> list[int]:
    """Most significant bit first."""
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def decode_bits(bits) -> int:
    v = 0
    for b in bits:
        v = 2 * v + int(b)
    return v


def binarize(table: RecordTable, strategy: str = "bitwise-log") -> RecordTable:
    """Replace each attribute by binary ones.

    ``bitwise-log``: ceil(log2 c) bits of the code, most significant first,
    named ``name.b0``, ``name.b1``, ...  ``one-hot``: c indicators named
    ``name=v``.
    """
    schema = table.schema
    rows = table.rows.astype(np.int64)
    names, cols = [], []
    for a, (name, card) in enumerate(zip(schema.names, schema.cardinalities)):
        if strategy == "bitwise-log":
            w = binary_width(card)
            for i in range(w):
                names.append(f"{name}.b{i}")
                cols.append((rows[:, a] >> (w - 1 - i)) & 1)
        elif strategy == "one-hot":
            for v in range(card):
                names.append(f"{name}={v}")
                cols.append((rows[:, a] == v).astype(np.int64))
        else:
            raise ConfigError(f"unknown binarization strategy {strategy!r}")
    data = np.stack(cols, axis=1) if cols else np.zeros((len(table), 0), dtype=np.int64)
    return RecordTable(AttributeSchema(tuple(names), (2,) * len(names)), data)


def header_line(meta: dict) -> str:
    return HEADER_PREFIX + json.dumps(meta, sort_keys=True, default=str) + "\n"


def read_header(path) -> dict | None:
    with open(path) as f:
        first = f.readline()
    if first.startswith(HEADER_PREFIX):
        return json.loads(first[len(HEADER_PREFIX):])
    return None


def export_synthetic(synthetic, path, fmt: str = "weighted", rng=None, meta: dict | None = None,
                     codecs: SchemaSpec | None = None):
    """Write a histogram or factored distribution as CSV.

    ``weighted``: one row per domain element, its attribute codes and weight.
    ``sampled``: round(n) records drawn in proportion to the weights (seeded).
    """
    from .factored import FactoredDistribution, export_histogram

    schema = synthetic.schema
    spec = codecs or SchemaSpec.plain(schema)
    with open(path, "w", newline="") as f:
        if meta is not None:
            f.write(header_line(meta))
        w = csv.writer(f)
        if fmt == "weighted":
            hist = export_histogram(synthetic) if isinstance(synthetic, FactoredDistribution) \
                else synthetic
            w.writerow(list(schema.names) + ["weight"])
            grid = np.indices(hist.universe.shape).reshape(len(schema), -1).T
            for codes, wt in zip(grid, hist.weights):
                w.writerow([c.decode(int(v)) for c, v in zip(spec.codecs, codes)] + [repr(float(wt))])
        elif fmt == "sampled":
            rows = sample_records(synthetic, make_rng(rng))
            w.writerow(list(schema.names))
            for r in rows:
                w.writerow([c.decode(int(v)) for c, v in zip(spec.codecs, r)])
        else:
            raise ConfigError(f"unknown export format {fmt!r}")


def sample_records(synthetic, rng) -> np.ndarray:
    """round(n) records drawn from the synthetic distribution."""
    from .factored import FactoredDistribution

    count = int(round(synthetic.mass))
    schema = synthetic.schema
    if isinstance(synthetic, FactoredDistribution):
        out = np.zeros((count, len(schema)), dtype=np.int64)
        for part in synthetic.parts:
            t = synthetic.tables[part]
            idx = rng.choice(t.size, size=count, p=t.reshape(-1) / t.sum())
            out[:, list(part)] = np.stack(np.unravel_index(idx, t.shape), axis=1)
        return out
    p = synthetic.weights / synthetic.weights.sum()
    idx = rng.choice(p.size, size=count, p=p)
    return np.stack(np.unravel_index(idx, synthetic.universe.shape), axis=1)


def read_weighted(path, schema) -> Histogram:
    """Re-read a weighted export as a histogram."""
    schema = as_spec(schema)
    universe = Universe(schema.schema)
    weights = np.zeros(universe.size)
    with open(path, newline="") as f:
        reader = csv.reader(_data_lines(f))
        header = [h.strip() for h in next(reader)]
        if header[-1] != "weight":
            raise DomainError(f"{path}: last column must be 'weight'")
        cols = [header.index(c.name) for c in schema.codecs]
        codes, ws = [], []
        for row in reader:
            if row:
                codes.append([_decode_label(c, row[k]) for c, k in zip(schema.codecs, cols)])
                ws.append(float(row[-1]))
    if codes:
        np.add.at(weights, indices_of(universe, np.array(codes)), ws)
    return Histogram(universe, weights)


def _decode_label(codec: AttributeCodec, label: str) -> int:
    """Inverse of :meth:`AttributeCodec.decode`."""
    if codec.bins is None:
        return codec.encode(label)
    lo = float(label.strip()[1:].split(",")[0])
    hits = np.flatnonzero(np.isclose(codec.bins[:-1], lo, rtol=1e-10, atol=0.0))
    if hits.size == 0:
        raise DomainError(f"{label!r} is not a bin of attribute {codec.name!r}")
    return int(hits[0])
