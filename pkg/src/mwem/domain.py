"""Attribute schemas, the record universe, record tables and histograms.

Domain elements are indexed in row-major order with the first attribute
most significant, so that for binary attributes the index of a record is
the integer whose bits read the attribute values left to right.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ResourceError

#: Largest domain for which explicit histograms are materialized.
EXPLICIT_CAP = 2 ** 26


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attribute names with their (finite) cardinalities."""

    names: tuple[str, ...]
    cardinalities: tuple[int, ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        cards = tuple(int(c) for c in self.cardinalities)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "cardinalities", cards)
        if len(names) != len(cards):
            raise DomainError("names and cardinalities differ in length")
        if len(set(names)) != len(names):
            raise DomainError(f"attribute names are not unique: {names}")
        for name, card in zip(names, cards):
            if card < 2:
                raise DomainError(f"attribute {name!r} has cardinality {card} < 2")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, int]]) -> "AttributeSchema":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @classmethod
    def binary(cls, d: int, prefix: str = "a") -> "AttributeSchema":
        return cls(tuple(f"{prefix}{i}" for i in range(d)), (2,) * d)

    @classmethod
    def from_shape(cls, shape: Sequence[int]) -> "AttributeSchema":
        return cls(tuple(f"a{i}" for i in range(len(shape))), tuple(shape))

    def __len__(self):
        return len(self.names)

    def index(self, attribute) -> int:
        """Position of an attribute given by name or position."""
        if isinstance(attribute, (int, np.integer)):
            if not 0 <= attribute < len(self.names):
                raise DomainError(f"attribute position {attribute} out of range")
            return int(attribute)
        try:
            return self.names.index(attribute)
        except ValueError:
            raise DomainError(f"unknown attribute {attribute!r}") from None

    def subdomain_size(self, attributes: Iterable[int]) -> int:
        size = 1
        for a in attributes:
            size *= self.cardinalities[a]
        return size

    @property
    def domain_size(self) -> int:
        return self.subdomain_size(range(len(self)))


@dataclass(frozen=True)
class Universe:
    """The record domain D: the cross product of all attribute ranges."""

    schema: AttributeSchema

    @property
    def size(self) -> int:
        return self.schema.domain_size

    @property
    def shape(self) -> tuple[int, ...]:
        return self.schema.cardinalities

    def index_of(self, values: Sequence[int]) -> int:
        return index_of(self, values)

    def tuple_of(self, index: int) -> tuple[int, ...]:
        return tuple_of(self, index)


def _check_tuple(universe: Universe, values: Sequence[int]):
    schema = universe.schema
    if len(values) != len(schema):
        raise DomainError(f"expected {len(schema)} values, got {len(values)}")
    for name, card, v in zip(schema.names, schema.cardinalities, values):
        if not 0 <= v < card:
            raise DomainError(f"value {v} out of range [0, {card}) for attribute {name!r}")


def index_of(universe: Universe, values: Sequence[int]) -> int:
    """Row-major index of a tuple of attribute values."""
    _check_tuple(universe, values)
    index = 0
    for card, v in zip(universe.shape, values):
        index = index * card + int(v)
    return index


def tuple_of(universe: Universe, index: int) -> tuple[int, ...]:
    if not 0 <= index < universe.size:
        raise DomainError(f"index {index} outside [0, {universe.size})")
    out = []
    for card in reversed(universe.shape):
        index, v = divmod(index, card)
        out.append(v)
    return tuple(reversed(out))


def indices_of(universe: Universe, rows: np.ndarray) -> np.ndarray:
    """Vectorized :func:`index_of` over an (n, d) array of records."""
    rows = np.asarray(rows)
    if rows.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.ravel_multi_index(tuple(rows.T.astype(np.int64)), universe.shape)


@dataclass
class RecordTable:
    """Integer-coded records, one row per individual."""

    schema: AttributeSchema
    rows: np.ndarray

    def __post_init__(self):
        d = len(self.schema)
        rows = np.asarray(self.rows)
        if rows.size == 0:
            rows = rows.reshape(0, d)
        if rows.ndim != 2 or rows.shape[1] != d:
            raise DomainError(f"rows must have shape (n, {d}), got {rows.shape}")
        if rows.size and not np.issubdtype(rows.dtype, np.integer):
            if not np.all(rows == np.round(rows)):
                raise DomainError("record values must be integers")
        cards = np.asarray(self.schema.cardinalities, dtype=np.int64)
        if rows.size:
            wide = rows.astype(np.int64)
            bad = (wide < 0) | (wide >= cards)
            if bad.any():
                r, a = map(int, np.argwhere(bad)[0])
                raise DomainError(
                    f"row {r}: value {wide[r, a]} out of range [0, {cards[a]}) "
                    f"for attribute {self.schema.names[a]!r}"
                )
        dtype = np.uint8 if cards.max(initial=2) <= 256 else np.int32
        self.rows = np.ascontiguousarray(rows, dtype=dtype)

    def __len__(self):
        return self.rows.shape[0]


@dataclass
class Histogram:
    """Nonnegative weight per domain element; total weight is the mass n."""

    universe: Universe
    weights: np.ndarray
    cap: int = field(default=EXPLICIT_CAP, repr=False)

    def __post_init__(self):
        if self.universe.size > self.cap:
            raise ResourceError(
                f"|D| = {self.universe.size} exceeds the explicit cap {self.cap}; "
                "use the factored engine"
            )
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.universe.size,):
            w = w.reshape(-1)
            if w.shape != (self.universe.size,):
                raise DomainError(f"expected {self.universe.size} weights, got {w.size}")
        if not np.all(np.isfinite(w)) or (w < 0).any():
            raise DomainError("histogram weights must be finite and nonnegative")
        self.weights = w

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def schema(self) -> AttributeSchema:
        return self.universe.schema

    def table(self) -> np.ndarray:
        """Weights viewed as a d-dimensional array over the attribute ranges."""
        return self.weights.reshape(self.universe.shape)

    def copy(self) -> "Histogram":
        return Histogram(self.universe, self.weights.copy(), self.cap)


def histogram_from_records(table: RecordTable, cap: int = EXPLICIT_CAP) -> Histogram:
    universe = Universe(table.schema)
    if universe.size > cap:
        raise ResourceError(f"|D| = {universe.size} exceeds the explicit cap {cap}")
    idx = indices_of(universe, table.rows)
    weights = np.bincount(idx, minlength=universe.size).astype(np.float64)
    return Histogram(universe, weights, cap)


def uniform_histogram(universe: Universe, mass: float, cap: int = EXPLICIT_CAP) -> Histogram:
    if mass < 0:
        raise DomainError(f"mass must be nonnegative, got {mass}")
    if universe.size > cap:
        raise ResourceError(f"|D| = {universe.size} exceeds the explicit cap {cap}")
    return Histogram(universe, np.full(universe.size, mass / universe.size), cap)
