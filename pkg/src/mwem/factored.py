"""Factored MWEM for large domains.

The approximation is kept as a product of small distributions, one per
part of a partition of the attributes.  As long as no measured query
spans two parts, multiplicative weights preserves that product form, and a
query that factors over attributes is evaluated part by part:

    q(A) = n * prod_j sum_{x_j} q_j(x_j) A^j(x_j)

Measuring a query whose footprint crosses parts first merges them; the
merged table is the outer product of the old ones.  Memory is the sum of
the part table sizes, never |D|.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .core import (
    Candidates,
    MwemConfig,
    MwemResult,
    _begin,
    _drive,
    _finish,
)
from .domain import (
    EXPLICIT_CAP,
    AttributeSchema,
    Histogram,
    RecordTable,
    Universe,
    histogram_from_records,
)
from .errors import ConfigError, DomainError, ResourceError
from .mech import make_rng
from .metrics import relative_entropy
from .query import CuboidGroup, LinearQuery, Workload, _outer, count_rows

#: Domains up to this size get an explicit copy of the data for diagnostics.
DIAGNOSTIC_CAP = 2 ** 20


class AttributePartition:
    """Disjoint-set forest over attribute positions."""

    def __init__(self, n_attributes: int):
        self._parent = list(range(n_attributes))

    def __len__(self):
        return len(self.parts)

    @property
    def n_attributes(self) -> int:
        return len(self._parent)

    def find(self, a: int) -> int:
        root = a
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[a] != root:
            self._parent[a], a = root, self._parent[a]
        return root

    def union(self, attributes) -> int | None:
        roots = sorted({self.find(a) for a in attributes})
        if not roots:
            return None
        for r in roots[1:]:
            self._parent[r] = roots[0]
        return roots[0]

    def part_of(self, a: int) -> tuple[int, ...]:
        r = self.find(a)
        return tuple(b for b in range(len(self._parent)) if self.find(b) == r)

    @property
    def parts(self) -> list[tuple[int, ...]]:
        groups: dict[int, list[int]] = {}
        for a in range(len(self._parent)):
            groups.setdefault(self.find(a), []).append(a)
        return [tuple(g) for g in sorted(groups.values())]

    def copy(self) -> "AttributePartition":
        p = AttributePartition(0)
        p._parent = list(self._parent)
        return p


class FactoredDistribution:
    """Product of per-part probability tables times a global mass n."""

    def __init__(self, schema: AttributeSchema, mass: float, tables: dict | None = None,
                 cap: int = EXPLICIT_CAP):
        if not mass >= 0:
            raise DomainError("mass must be nonnegative")
        self.schema = schema
        self.mass = float(mass)
        self.cap = cap
        self.partition = AttributePartition(len(schema))
        self.tables: dict[tuple, np.ndarray] = {}
        self.history = []
        if tables is None:
            for a, card in enumerate(schema.cardinalities):
                self.tables[(a,)] = np.full(card, 1.0 / card)
        else:
            seen = []
            for part, t in tables.items():
                part = tuple(int(a) for a in part)
                if list(part) != sorted(part):
                    raise DomainError(f"part {part} must list attributes in increasing order")
                t = np.array(t, dtype=np.float64)
                if t.shape != tuple(schema.cardinalities[a] for a in part):
                    raise DomainError(f"table for part {part} has shape {t.shape}")
                if (t < 0).any() or abs(t.sum() - 1.0) > 1e-9:
                    raise DomainError(f"table for part {part} is not a probability table")
                self.tables[part] = t
                self.partition.union(part)
                seen.extend(part)
            if sorted(seen) != list(range(len(schema))):
                raise DomainError("parts must be disjoint and cover every attribute")
        self._owner = {a: part for part in self.tables for a in part}
        self.peak_entries = self.entries

    @property
    def parts(self) -> list[tuple[int, ...]]:
        return sorted(self.tables)

    @property
    def entries(self) -> int:
        return sum(t.size for t in self.tables.values())

    @property
    def universe(self) -> Universe:
        return Universe(self.schema)

    def part_of(self, a: int) -> tuple[int, ...]:
        try:
            return self._owner[a]
        except KeyError:
            raise DomainError(f"attribute {a} outside the schema") from None

    def parts_of(self, attributes) -> list[tuple[int, ...]]:
        return sorted({self.part_of(a) for a in attributes})

    def entangle(self, attributes) -> tuple[int, ...] | None:
        """Merge the parts touched by ``attributes``; returns the owning part."""
        parts = self.parts_of(attributes)
        if not parts:
            return None
        if len(parts) == 1:
            return parts[0]
        size = 1
        for p in parts:
            size *= self.tables[p].size
        if size > self.cap:
            raise ResourceError(
                f"merging parts {parts} needs a table of {size} entries, above the cap "
                f"{self.cap}; use queries with smaller attribute footprints"
            )
        self.peak_entries = max(self.peak_entries, self.entries + size)
        order = [a for p in parts for a in p]
        merged = _outer([self.tables.pop(p) for p in parts])
        part = tuple(sorted(order))
        self.tables[part] = np.ascontiguousarray(
            np.transpose(merged, [order.index(a) for a in part])
        )
        self.partition.union(part)
        for a in part:
            self._owner[a] = part
        return part

    def marginal(self, attributes) -> np.ndarray:
        """Probability table over ``attributes`` (sorted), as a product of part marginals."""
        attrs = tuple(sorted(attributes))
        pieces, order = [], []
        for part in self.parts_of(attrs):
            keep = [a for a in part if a in attrs]
            drop = tuple(i for i, a in enumerate(part) if a not in attrs)
            pieces.append(self.tables[part].sum(axis=drop) if drop else self.tables[part])
            order.extend(keep)
        joint = _outer(pieces)
        return np.transpose(joint, [order.index(a) for a in attrs]) if order else joint

    def copy(self) -> "FactoredDistribution":
        d = FactoredDistribution(self.schema, self.mass,
                                 {p: t.copy() for p, t in self.tables.items()}, self.cap)
        d.history = list(self.history)
        d.peak_entries = self.peak_entries
        return d


def partition_update(target, query: LinearQuery):
    """Union the parts touched by the query's footprint (merging tables for a distribution)."""
    if isinstance(target, FactoredDistribution):
        target.entangle(query.attributes)
    elif isinstance(target, AttributePartition):
        target.union(query.attributes)
    else:
        raise DomainError("partition_update needs an AttributePartition or FactoredDistribution")
    return target


def _contract(table: np.ndarray, part, factor_of: dict) -> float:
    """Sum of the table against the product of the given per-attribute factors."""
    x = table
    for a in reversed(part):
        x = x @ factor_of[a] if a in factor_of else x.sum(axis=-1)
    return float(x)


def _part_vector(query: LinearQuery, part, schema: AttributeSchema) -> np.ndarray:
    """Query values over the sub-domain of ``part`` (which holds its footprint)."""
    if not set(query.attributes) <= set(part):
        raise DomainError(f"query footprint {query.attributes} is not inside part {part}")
    factors = query.factors(schema)
    if factors is not None:
        by_attr = dict(zip(query.attributes, factors))
        return _outer([by_attr.get(a, np.ones(schema.cardinalities[a])) for a in part]).reshape(-1)
    shape = [schema.cardinalities[a] if a in query.attributes else 1 for a in part]
    full = [schema.cardinalities[a] for a in part]
    return np.broadcast_to(query.tensor(schema).reshape(shape), full).reshape(-1).astype(np.float64)


def _expectation(query: LinearQuery, dist: FactoredDistribution) -> float:
    schema = dist.schema
    factors = query.factors(schema)
    parts = dist.parts_of(query.attributes)
    if factors is not None:
        by_attr = dict(zip(query.attributes, factors))
        out = 1.0
        for part in parts:
            out *= _contract(dist.tables[part], part, by_attr)
        return out
    if not parts:
        return float(query.tensor(schema))
    if len(parts) == 1:
        return float(_part_vector(query, parts[0], schema) @ dist.tables[parts[0]].reshape(-1))
    return float(np.sum(dist.marginal(query.attributes) * query.tensor(schema)))


def factored_evaluate(query: LinearQuery, dist: FactoredDistribution) -> float:
    """``q(A)`` computed part by part."""
    query.check(dist.schema)
    return dist.mass * _expectation(query, dist)


def factored_mw_update(dist: FactoredDistribution, query: LinearQuery, target: float):
    """Merge the footprint's parts, then one multiplicative-weights step on the owning part."""
    query.check(dist.schema)
    if not dist.mass > 0:
        raise DomainError("factored_mw_update needs positive mass")
    part = dist.entangle(query.attributes)
    n = dist.mass
    if part is None:
        q = n * _expectation(query, dist)
    else:
        w = dist.tables[part].reshape(-1)
        v = _part_vector(query, part, dist.schema)
        e = float(v @ w)
        q = n * e
        kernels.mw_scale(w, v, (target / n - e) / 2.0, 1.0)
    dist.history.append((query, float(target), float(target - q)))
    return dist


def export_histogram(dist: FactoredDistribution, cap: int = EXPLICIT_CAP) -> Histogram:
    """Explicit histogram with weight n * prod_j A^j(x_j) at each x."""
    universe = dist.universe
    if universe.size > cap:
        raise ResourceError(f"|D| = {universe.size} exceeds the explicit cap {cap}")
    order = [a for p in dist.parts for a in p]
    joint = _outer([dist.tables[p] for p in dist.parts])
    joint = np.transpose(joint, [order.index(a) for a in range(len(order))]) if order else joint
    return Histogram(universe, dist.mass * np.asarray(joint).reshape(-1), cap)


class FactoredModel:
    """Driver model backed by a :class:`FactoredDistribution` packed into one flat buffer."""

    def __init__(self, schema: AttributeSchema, cells: list, mass: float, cap: int = EXPLICIT_CAP):
        self.schema = schema
        self.cells = cells
        self.mass = float(mass)
        self.dist = FactoredDistribution(schema, mass, cap=cap)
        self.factors = [q.factors(schema) for q in cells]
        self.custom = [j for j, f in enumerate(self.factors) if f is None]
        self.product = np.array([j for j, f in enumerate(self.factors) if f is not None],
                                dtype=np.int64)
        self._vec_cache: dict = {}
        self._seg_cache: dict = {}
        self._entries: list = []
        self._answers = None
        self._src_id: dict = {}
        self._src_key: list = []
        self._plan: dict = {}
        self._dirty = set(self.product.tolist())
        self._cells_by_attr = [[] for _ in range(len(schema))]
        for j in self._dirty:
            for a in cells[j].attributes:
                self._cells_by_attr[a].append(j)
        self._pack()

    @property
    def peak_entries(self) -> int:
        return self.dist.peak_entries

    @property
    def part_count(self) -> int:
        return len(self.dist.tables)

    def _pack(self):
        parts = self.dist.parts
        sizes = [self.dist.tables[p].size for p in parts]
        self.part_off = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.part_size = np.asarray(sizes, dtype=np.int64)
        self.flat = np.concatenate([self.dist.tables[p].reshape(-1) for p in parts])
        self.index = {}
        for i, p in enumerate(parts):
            o, s = self.part_off[i], self.part_size[i]
            self.dist.tables[p] = self.flat[o:o + s].reshape(self.dist.tables[p].shape)
            self.index[p] = i
        self._layout = None
        self._layout_stale_entries = True
        self._answers = None

    def _seg_vals(self, j: int, subset) -> np.ndarray:
        key = (j, subset)
        if key not in self._seg_cache:
            by_attr = dict(zip(self.cells[j].attributes, self.factors[j]))
            self._seg_cache[key] = _outer([by_attr[a] for a in subset]).reshape(-1)
        return self._seg_cache[key]

    def _plan_cell(self, j: int):
        """Source ids, segment sizes and values for cell j under the current partition."""
        attrs = self.cells[j].attributes
        ids, vals = [], []
        for part in self.dist.parts_of(attrs):
            key = (part, tuple(a for a in part if a in attrs))
            sid = self._src_id.get(key)
            if sid is None:
                sid = self._src_id[key] = len(self._src_key)
                self._src_key.append(key)
            ids.append(sid)
            vals.append(self._seg_vals(j, key[1]))
        sizes = [v.shape[0] for v in vals]
        return ids, sizes, vals

    def _build_layout(self):
        """Segment layout for all product cells; only cells touched by a merge are re-planned.

        A source is a part table itself or a marginal of it onto a subset of its
        attributes.  Sources live at ``src[base[id]:]`` where ``src`` is the flat
        buffer followed by the marginals computed each round.
        """
        for j in self._dirty:
            self._plan[j] = self._plan_cell(j)
        self._dirty.clear()
        plans = [self._plan[j] for j in self.product]
        ids = np.fromiter((i for p in plans for i in p[0]), dtype=np.int64)
        sizes = np.fromiter((z for p in plans for z in p[1]), dtype=np.int64)
        vals = [v for p in plans for v in p[2]]
        nseg = np.fromiter((len(p[0]) for p in plans), dtype=np.int64, count=len(plans))

        base = np.zeros(len(self._src_key), dtype=np.int64)
        margs: dict = {}
        total = 0
        for sid in np.unique(ids):
            part, subset = self._src_key[sid]
            if subset == part:
                base[sid] = self.part_off[self.index[part]]
            else:
                margs.setdefault(part, []).append((sid, subset))
        flat_len = self.flat.shape[0]
        marg_plans = []
        for part, keys in margs.items():
            start = total
            offs = []
            for sid, subset in keys:
                base[sid] = flat_len + total
                offs.append(total - start)
                total += self.schema.subdomain_size(subset)
            axes = [[part.index(a) for a in subset] for _, subset in keys]
            marg_plans.append((
                part,
                np.array([self.schema.cardinalities[a] for a in part], dtype=np.int64),
                np.array([x for ax in axes for x in ax], dtype=np.int64),
                np.cumsum([0] + [len(ax) for ax in axes]).astype(np.int64),
                np.array(offs, dtype=np.int64),
                start,
                total - start,
            ))
        seg_ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        within = np.arange(seg_ptr[-1]) - np.repeat(seg_ptr[:-1], sizes)
        gather = np.repeat(base[ids], sizes) + within
        self._layout = (
            gather,
            np.concatenate(vals) if vals else np.zeros(0),
            seg_ptr,
            np.concatenate([[0], np.cumsum(nseg)]).astype(np.int64),
            marg_plans,
            total,
        )

    def answers(self) -> np.ndarray:
        if self._answers is None:
            self._answers = self._compute_answers()
        return self._answers

    def _compute_answers(self) -> np.ndarray:
        if self._layout is None:
            self._build_layout()
        gather, vals, seg_ptr, q_ptr, plans, marg_total = self._layout
        src = self.flat
        if plans:
            src = np.empty(self.flat.shape[0] + marg_total)
            src[:self.flat.shape[0]] = self.flat
            base = self.flat.shape[0]
            for part, cards, key_axes, key_ptr, out_off, start, length in plans:
                table = self.dist.tables[part].reshape(-1)
                src[base + start:base + start + length] = kernels.marginals(
                    table, cards, key_axes, key_ptr, out_off, length)
        out = np.empty(len(self.cells))
        if self.product.size:
            out[self.product] = kernels.segment_products(src, gather, vals, seg_ptr, q_ptr)
        for j in self.custom:
            out[j] = _expectation(self.cells[j], self.dist)
        return self.mass * out

    def absorb(self, cells):
        merged = []
        for j in cells:
            if len(self.dist.parts_of(self.cells[j].attributes)) > 1:
                merged.append(self.dist.entangle(self.cells[j].attributes))
        if merged:
            for part in merged:
                for a in part:
                    self._dirty.update(self._cells_by_attr[a])
            self._pack()

    def _vec(self, j: int, part) -> np.ndarray:
        key = (j, part)
        if key not in self._vec_cache:
            self._vec_cache[key] = _part_vector(self.cells[j], part, self.schema)
        return self._vec_cache[key]

    def _owner(self, j: int):
        attrs = self.cells[j].attributes
        return self.dist.part_of(attrs[0]) if attrs else None

    def update(self, cell: int, m: float) -> float:
        part = self._owner(cell)
        if part is None:
            return m - self.mass * _expectation(self.cells[cell], self.dist)
        i = self.index[part]
        w = self.flat[self.part_off[i]:self.part_off[i] + self.part_size[i]]
        v = self._vec(cell, part)
        e = float(v @ w)
        kernels.mw_scale(w, v, (m / self.mass - e) / 2.0, 1.0)
        self._answers = None
        return m - self.mass * e

    def _replay_entries(self, cells):
        """(part index, value vector) per history entry, extended as the history grows."""
        known = self._entries
        if self._layout_stale_entries:
            known.clear()
            self._layout_stale_entries = False
        for j in cells[len(known):]:
            part = self._owner(j)
            known.append((-1, None) if part is None else (self.index[part], self._vec(j, part)))
        return known

    def replay(self, cells, targets, passes: int):
        if passes == 0 or not len(cells):
            return
        self._answers = None
        entries = self._replay_entries(list(cells))
        part_idx = np.array([p for p, _ in entries], dtype=np.int64)
        keep = np.flatnonzero(part_idx >= 0)
        if not keep.size:
            return
        keep = keep[np.argsort(part_idx[keep], kind="stable")]
        order, counts = np.unique(part_idx[keep], return_counts=True)
        vecs = [entries[e][1] for e in keep]
        lens = np.array([v.shape[0] for v in vecs], dtype=np.int64)
        kernels.replay_parts(
            self.flat,
            self.part_off[order],
            self.part_size[order],
            np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
            np.concatenate([[0], np.cumsum(lens)[:-1]]).astype(np.int64),
            np.concatenate(vecs),
            np.asarray(targets, dtype=np.float64)[keep] / self.mass,
            int(passes),
            1.0,
        )

    def snapshot(self):
        raise ConfigError("output_mode 'average' is not available in factored mode")

    def potential(self, truth: Histogram) -> float:
        return relative_entropy(truth, export_histogram(self.dist))


def run_mwem_factored(dataset: RecordTable, workload, config: MwemConfig, rng=None,
                      cap: int = EXPLICIT_CAP) -> MwemResult:
    """MWEM on a product representation.  ``workload`` is a Workload or a list of CuboidGroup.

    True answers are counted directly over the records.  Returns
    (FactoredDistribution, history, trace, ledger).
    """
    if config.output_mode != "last":
        raise ConfigError("factored mode supports output_mode 'last' only")
    if config.histogram_init_fraction > 0:
        raise ConfigError("histogram initialization needs an explicit domain; use mode explicit")
    schema = dataset.schema
    if isinstance(workload, Workload):
        cands = Candidates.from_workload(workload)
    elif workload and all(isinstance(g, CuboidGroup) for g in workload):
        cands = Candidates.from_cuboids(workload)
    else:
        raise ConfigError("workload must be a Workload or a list of CuboidGroup")
    for q in cands.cells:
        q.check(schema)
    rng = make_rng(rng)
    rows = dataset.rows
    setup = _begin(config, cands, lambda: count_rows(cands.cells, schema, rows),
                   dataset, float(len(dataset)), rng)
    truth = None
    if config.diagnostics and Universe(schema).size <= DIAGNOSTIC_CAP:
        truth = histogram_from_records(dataset)

    def make_model():
        return FactoredModel(schema, cands.cells, setup.mass, cap)

    run, stages = _drive(make_model, setup, cands, config, rng, truth_hist=truth)
    dist = run.model.dist
    dist.history = run.history
    return _finish(run, setup, dist, stages)
