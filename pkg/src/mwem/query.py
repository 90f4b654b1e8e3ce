"""Linear queries, workloads and cuboid groups.

A linear query maps each record to a value in [-1, +1] and is extended to
histograms by the weighted sum ``q(A) = sum_x q(x) A(x)``.  Range, parity
and cell queries are products of per-attribute factors, which is what lets
the factored engine evaluate them part by part.  Custom queries carry an
explicit value table over the attributes they depend on.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import AttributeSchema, Histogram, Universe
from . import kernels
from .errors import DomainError, ResourceError

#: Largest value table a custom query may carry.
CUSTOM_TABLE_CAP = 2 ** 16
#: Largest dense workload matrix (|Q| x |D| entries) the explicit engine builds.
MATRIX_CAP = 2 ** 25


def _outer(vectors: Sequence[np.ndarray]) -> np.ndarray:
    if not vectors:
        return np.ones(())
    return reduce(np.multiply.outer, vectors)


class LinearQuery:
    """Base class.  ``attributes`` is the sorted footprint of the query."""

    kind = "abstract"
    attributes: tuple[int, ...] = ()
    counting = False

    def factors(self, schema: AttributeSchema) -> list[np.ndarray] | None:
        """Per-attribute value vectors whose product is the query, or None."""
        return None

    def tensor(self, schema: AttributeSchema) -> np.ndarray:
        """Query values over the footprint sub-domain (axes follow ``attributes``)."""
        return _outer(self.factors(schema))

    def values(self, universe: Universe) -> np.ndarray:
        """Dense value vector over the whole domain, in index order."""
        shape = universe.shape
        t = self.tensor(universe.schema)
        full = [shape[a] if a in self.attributes else 1 for a in range(len(shape))]
        return np.broadcast_to(t.reshape(full), shape).reshape(-1).astype(np.float64)

    def on_rows(self, rows: np.ndarray) -> np.ndarray:
        """Per-record values for an (n, d) array of integer-coded records."""
        raise NotImplementedError

    def check(self, schema: AttributeSchema):
        for a in self.attributes:
            if not 0 <= a < len(schema):
                raise DomainError(f"{self.kind} query refers to attribute {a} outside the schema")

    def to_dict(self, schema: AttributeSchema | None = None) -> dict:
        names = [schema.names[a] for a in self.attributes] if schema else list(self.attributes)
        return {"kind": self.kind, "attributes": names}


def _sorted_by_attribute(attributes, *columns):
    order = sorted(range(len(attributes)), key=lambda i: attributes[i])
    attrs = tuple(int(attributes[i]) for i in order)
    if len(set(attrs)) != len(attrs):
        raise DomainError(f"repeated attribute in {attrs}")
    return (attrs,) + tuple(tuple(col[i] for i in order) for col in columns)


class RangeQuery(LinearQuery):
    """Indicator of a cross product of inclusive intervals."""

    kind = "range"
    counting = True

    def __init__(self, attributes: Sequence[int], intervals: Sequence[tuple[int, int]]):
        if len(attributes) != len(intervals):
            raise DomainError("one interval per attribute is required")
        self.attributes, self.intervals = _sorted_by_attribute(
            attributes, [(int(lo), int(hi)) for lo, hi in intervals]
        )
        for lo, hi in self.intervals:
            if lo > hi:
                raise DomainError(f"empty interval [{lo}, {hi}]")

    def check(self, schema):
        super().check(schema)
        for a, (lo, hi) in zip(self.attributes, self.intervals):
            if lo < 0 or hi >= schema.cardinalities[a]:
                raise DomainError(
                    f"interval [{lo}, {hi}] outside the range of attribute {schema.names[a]!r}"
                )

    def factors(self, schema):
        out = []
        for a, (lo, hi) in zip(self.attributes, self.intervals):
            f = np.zeros(schema.cardinalities[a])
            f[lo:hi + 1] = 1.0
            out.append(f)
        return out

    def on_rows(self, rows):
        keep = np.ones(rows.shape[0], dtype=bool)
        for a, (lo, hi) in zip(self.attributes, self.intervals):
            keep &= (rows[:, a] >= lo) & (rows[:, a] <= hi)
        return keep.astype(np.float64)

    def to_dict(self, schema=None):
        d = super().to_dict(schema)
        d["intervals"] = [list(iv) for iv in self.intervals]
        return d

    def __repr__(self):
        return f"RangeQuery({self.attributes}, {self.intervals})"


class ParityQuery(LinearQuery):
    """+1 on records with an even number of the chosen bits set, -1 otherwise."""

    kind = "parity"

    def __init__(self, attributes: Sequence[int]):
        (self.attributes,) = _sorted_by_attribute(attributes)

    def check(self, schema):
        super().check(schema)
        for a in self.attributes:
            if schema.cardinalities[a] != 2:
                raise DomainError(f"parity query over non-binary attribute {schema.names[a]!r}")

    def factors(self, schema):
        return [np.array([1.0, -1.0]) for _ in self.attributes]

    def on_rows(self, rows):
        if not self.attributes:
            return np.ones(rows.shape[0])
        bits = rows[:, list(self.attributes)].astype(np.int64).sum(axis=1) & 1
        return 1.0 - 2.0 * bits

    def __repr__(self):
        return f"ParityQuery({self.attributes})"


class CellQuery(LinearQuery):
    """Indicator of the conjunction ``x[a] == v`` over its attributes."""

    kind = "cell"
    counting = True

    def __init__(self, attributes: Sequence[int], values: Sequence[int]):
        if len(attributes) != len(values):
            raise DomainError("one value per attribute is required")
        self.attributes, self.cell = _sorted_by_attribute(attributes, [int(v) for v in values])

    def check(self, schema):
        super().check(schema)
        for a, v in zip(self.attributes, self.cell):
            if not 0 <= v < schema.cardinalities[a]:
                raise DomainError(f"value {v} out of range for attribute {schema.names[a]!r}")

    def factors(self, schema):
        out = []
        for a, v in zip(self.attributes, self.cell):
            f = np.zeros(schema.cardinalities[a])
            f[v] = 1.0
            out.append(f)
        return out

    def on_rows(self, rows):
        keep = np.ones(rows.shape[0], dtype=bool)
        for a, v in zip(self.attributes, self.cell):
            keep &= rows[:, a] == v
        return keep.astype(np.float64)

    def to_dict(self, schema=None):
        d = super().to_dict(schema)
        d["values"] = list(self.cell)
        return d

    def __repr__(self):
        return f"CellQuery({self.attributes}, {self.cell})"


class CustomQuery(LinearQuery):
    """Explicit value table over a set of attributes (the whole schema by default)."""

    kind = "custom"

    def __init__(self, attributes: Sequence[int], table):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != len(attributes):
            raise DomainError("table must have one axis per attribute")
        if table.size > CUSTOM_TABLE_CAP:
            raise ResourceError(
                f"custom query table of {table.size} entries exceeds {CUSTOM_TABLE_CAP}"
            )
        if not np.all(np.isfinite(table)) or np.abs(table).max(initial=0) > 1:
            raise DomainError("custom query values must lie in [-1, +1]")
        order = sorted(range(len(attributes)), key=lambda i: attributes[i])
        self.attributes = tuple(int(attributes[i]) for i in order)
        if len(set(self.attributes)) != len(self.attributes):
            raise DomainError(f"repeated attribute in {self.attributes}")
        self.table = np.transpose(table, order).copy()
        self.counting = bool(np.all((self.table == 0) | (self.table == 1)))

    @classmethod
    def over_domain(cls, universe: Universe, values) -> "CustomQuery":
        values = np.asarray(values, dtype=np.float64).reshape(universe.shape)
        return cls(tuple(range(len(universe.shape))), values)

    def check(self, schema):
        super().check(schema)
        expect = tuple(schema.cardinalities[a] for a in self.attributes)
        if self.table.shape != expect:
            raise DomainError(f"custom table shape {self.table.shape} != {expect}")

    def tensor(self, schema):
        return self.table

    def on_rows(self, rows):
        if not self.attributes:
            return np.full(rows.shape[0], float(self.table))
        return self.table[tuple(rows[:, a].astype(np.int64) for a in self.attributes)]

    def to_dict(self, schema=None):
        d = super().to_dict(schema)
        d["values"] = self.table.reshape(-1).tolist()
        return d

    def __repr__(self):
        return f"CustomQuery({self.attributes})"


def evaluate(query: LinearQuery, hist: Histogram) -> float:
    """``q(A) = sum_x q(x) A(x)``."""
    query.check(hist.schema)
    return float(query.values(hist.universe) @ hist.weights)


def evaluate_rows(query: LinearQuery, rows: np.ndarray) -> float:
    """The same sum taken record by record over a table of rows."""
    return float(query.on_rows(rows).sum())


@dataclass
class Workload:
    """An ordered, non-empty list of queries; position is identity."""

    queries: list
    label: str = ""
    _matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.queries = list(self.queries)
        if not self.queries:
            raise DomainError("a workload needs at least one query")

    def __len__(self):
        return len(self.queries)

    def __getitem__(self, i):
        return self.queries[i]

    def __iter__(self):
        return iter(self.queries)

    def check(self, schema: AttributeSchema):
        for q in self.queries:
            q.check(schema)

    def matrix(self, universe: Universe, cap: int = MATRIX_CAP) -> np.ndarray:
        """Dense |Q| x |D| value matrix, built once and cached."""
        if self._matrix is not None and self._matrix.shape == (len(self), universe.size):
            return self._matrix
        if len(self) * universe.size > cap:
            raise ResourceError(
                f"workload matrix of {len(self)} x {universe.size} entries exceeds {cap}; "
                "use the factored engine"
            )
        self.check(universe.schema)
        m = np.empty((len(self), universe.size))
        for i, q in enumerate(self.queries):
            m[i] = q.values(universe)
        self._matrix = m
        return m

    def evaluate(self, hist: Histogram) -> np.ndarray:
        return self.matrix(hist.universe) @ hist.weights

    def evaluate_rows(self, rows: np.ndarray, schema: AttributeSchema) -> np.ndarray:
        """``q(B)`` for every query, streaming over the records."""
        return count_rows(self.queries, schema, rows)


@dataclass
class CuboidGroup:
    """All cells of the marginal over a set of attributes, in index order."""

    attributes: tuple[int, ...]
    cells: list

    @classmethod
    def over(cls, schema: AttributeSchema, attributes: Iterable[int]) -> "CuboidGroup":
        attrs = tuple(sorted(int(a) for a in attributes))
        ranges = [range(schema.cardinalities[a]) for a in attrs]
        cells = [CellQuery(attrs, vals) for vals in itertools.product(*ranges)]
        return cls(attrs, cells)

    def __len__(self):
        return len(self.cells)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def random_range_workload(universe: Universe, count: int, rng=None) -> Workload:
    """``count`` range queries with intervals drawn uniformly from all lo <= hi pairs."""
    if count < 1:
        raise DomainError("a range workload needs count >= 1")
    rng = _rng(rng)
    attrs = tuple(range(len(universe.shape)))
    lows, highs = [], []
    for card in universe.shape:
        starts = np.concatenate([[0], np.cumsum(card - np.arange(card))])
        k = rng.integers(0, starts[-1], size=count)
        lo = np.searchsorted(starts, k, side="right") - 1
        lows.append(lo)
        highs.append(lo + (k - starts[lo]))
    queries = [
        RangeQuery(attrs, [(lows[a][i], highs[a][i]) for a in attrs]) for i in range(count)
    ]
    return Workload(queries, f"range:{count}")


def parity_workload(universe: Universe, max_order: int, include_empty: bool = False) -> Workload:
    """One parity query per attribute subset of size <= max_order, by size then lexicographic."""
    schema = universe.schema
    for name, card in zip(schema.names, schema.cardinalities):
        if card != 2:
            raise DomainError(f"parity queries need binary attributes; {name!r} has {card} values")
    d = len(schema)
    start = 0 if include_empty else 1
    queries = [
        ParityQuery(s)
        for k in range(start, min(max_order, d) + 1)
        for s in itertools.combinations(range(d), k)
    ]
    return Workload(queries, f"parity:{max_order}")


def cuboid_workload(universe: Universe, max_order: int, include_empty: bool = False) -> list:
    """One cuboid group per attribute subset of size <= max_order."""
    schema = universe.schema
    d = len(schema)
    if max_order > d:
        raise DomainError(f"max_order {max_order} exceeds the {d} attributes")
    start = 0 if include_empty else 1
    return [
        CuboidGroup.over(schema, s)
        for k in range(start, max_order + 1)
        for s in itertools.combinations(range(d), k)
    ]


def hadamard_matrix(order: int, dtype=np.float64) -> np.ndarray:
    """Sylvester–Hadamard matrix of side 2**(order-1) built by block recursion."""
    if order < 1:
        raise DomainError("order must be >= 1")
    if order - 1 > 13:
        raise ResourceError(f"Hadamard side 2**{order - 1} exceeds 2**13")
    h = np.ones((1, 1), dtype=dtype)
    for _ in range(order - 1):
        h = np.block([[h, h], [h, -h]])
    return h


def marginal_of(hist: Histogram, attributes: Sequence) -> np.ndarray:
    """Cell counts of the marginal over ``attributes`` (axes in the given order)."""
    schema = hist.schema
    if not attributes:
        raise DomainError("a marginal needs at least one attribute")
    attrs = [schema.index(a) for a in attributes]
    if len(set(attrs)) != len(attrs):
        raise DomainError(f"repeated attribute in {attributes}")
    drop = tuple(a for a in range(len(schema)) if a not in attrs)
    table = hist.table().sum(axis=drop)
    kept = sorted(attrs)
    return np.transpose(table, [kept.index(a) for a in attrs])


def query_from_dict(entry: dict, schema: AttributeSchema) -> LinearQuery:
    kind = entry.get("kind")
    attrs = [schema.index(a) for a in entry.get("attributes", [])]
    if kind == "range":
        q = RangeQuery(attrs, [tuple(iv) for iv in entry["intervals"]])
    elif kind == "parity":
        q = ParityQuery(attrs)
    elif kind == "cell":
        q = CellQuery(attrs, entry["values"])
    elif kind == "custom":
        shape = tuple(schema.cardinalities[a] for a in attrs)
        q = CustomQuery(attrs, np.asarray(entry["values"], dtype=np.float64).reshape(shape))
    else:
        raise DomainError(f"unknown query kind {kind!r}")
    q.check(schema)
    return q


def load_workload(path, schema: AttributeSchema) -> Workload:
    doc = json.loads(Path(path).read_text())
    entries = doc["queries"] if isinstance(doc, dict) else doc
    label = doc.get("label", str(path)) if isinstance(doc, dict) else str(path)
    return Workload([query_from_dict(e, schema) for e in entries], label)


def dump_workload(workload: Workload, path, schema: AttributeSchema | None = None):
    doc = {"label": workload.label, "queries": [q.to_dict(schema) for q in workload]}
    Path(path).write_text(json.dumps(doc, indent=1))


def count_rows(queries: Sequence[LinearQuery], schema: AttributeSchema, rows: np.ndarray) -> np.ndarray:
    """Sum of each query over the records of ``rows`` (an (n, d) integer array)."""
    out = np.zeros(len(queries))
    term_ptr, term_attr, term_off, fvals = [0], [], [], []
    product_idx, offset = [], 0
    for j, q in enumerate(queries):
        q.check(schema)
        factors = q.factors(schema)
        if factors is None:
            out[j] = q.on_rows(rows).sum()
            continue
        product_idx.append(j)
        for a, f in zip(q.attributes, factors):
            term_attr.append(a)
            term_off.append(offset)
            fvals.append(f)
            offset += f.shape[0]
        term_ptr.append(len(term_attr))
    if product_idx:
        counts = kernels.product_counts(
            np.asfortranarray(rows),
            np.asarray(term_ptr, dtype=np.int64),
            np.asarray(term_attr, dtype=np.int64),
            np.asarray(term_off, dtype=np.int64),
            np.concatenate(fvals) if fvals else np.zeros(0),
        )
        out[product_idx] = counts
    return out
