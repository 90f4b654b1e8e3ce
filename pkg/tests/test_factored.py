import numpy as np
import pytest

from mwem.core import MwemConfig, mw_update, run_mwem, run_mwem_cuboids
from mwem.domain import AttributeSchema, RecordTable, histogram_from_records
from mwem.errors import ConfigError, DomainError, ResourceError
from mwem.factored import (
    AttributePartition,
    FactoredDistribution,
    export_histogram,
    factored_evaluate,
    factored_mw_update,
    partition_update,
    run_mwem_factored,
)
from mwem.query import (
    CellQuery,
    CustomQuery,
    ParityQuery,
    RangeQuery,
    Workload,
    cuboid_workload,
    evaluate,
    marginal_of,
)

from conftest import correlated_rows


def test_partition_union_find():
    p = AttributePartition(5)
    assert len(p) == 5
    p.union((0, 3))
    p.union((3, 4))
    assert p.part_of(4) == (0, 3, 4)
    assert p.parts == [(0, 3, 4), (1,), (2,)]
    q = p.copy()
    q.union((1, 2))
    assert len(p) == 3 and len(q) == 2


def test_distribution_starts_uniform_and_exports(mixed_schema):
    d = FactoredDistribution(mixed_schema, 48.0)
    assert d.parts == [(0,), (1,), (2,)] and d.entries == 9
    assert np.allclose(export_histogram(d).weights, 2.0)


def test_distribution_rejects_bad_tables(mixed_schema):
    with pytest.raises(DomainError):
        FactoredDistribution(mixed_schema, 1.0, {(0,): np.ones(3) / 3, (1, 2): np.ones((2, 4))})
    with pytest.raises(DomainError):
        FactoredDistribution(mixed_schema, 1.0, {(0,): np.ones(3) / 3, (1,): [0.5, 0.5]})
    with pytest.raises(DomainError):
        FactoredDistribution(mixed_schema, 1.0, {(2, 0): np.ones((4, 3)) / 12,
                                                 (1,): [0.5, 0.5]})


def test_entangle_preserves_the_distribution(mixed_schema, rng):
    tables = {(0,): rng.dirichlet(np.ones(3)), (1,): rng.dirichlet(np.ones(2)),
              (2,): rng.dirichlet(np.ones(4))}
    d = FactoredDistribution(mixed_schema, 10.0, tables)
    before = export_histogram(d).weights
    assert d.entangle((2, 0)) == (0, 2)
    assert d.parts == [(0, 2), (1,)]
    assert d.peak_entries >= 12 + 2
    assert np.allclose(export_histogram(d).weights, before, rtol=1e-12)
    with pytest.raises(ResourceError):
        FactoredDistribution(mixed_schema, 1.0, cap=10).entangle((0, 2))


def test_marginal_is_product_of_part_marginals(mixed_schema, rng):
    d = FactoredDistribution(mixed_schema, 1.0, {(0, 1): rng.dirichlet(np.ones(6)).reshape(3, 2),
                                                 (2,): rng.dirichlet(np.ones(4))})
    h = export_histogram(d)
    assert np.allclose(d.marginal((2, 0)), marginal_of(h, [0, 2]), atol=1e-12)


def test_factored_evaluate_matches_explicit(mixed_schema, rng):
    d = FactoredDistribution(mixed_schema, 7.0, {(0, 2): rng.dirichlet(np.ones(12)).reshape(3, 4),
                                                 (1,): rng.dirichlet(np.ones(2))})
    h = export_histogram(d)
    qs = [RangeQuery((0, 1), [(1, 2), (1, 1)]), CellQuery((2,), (3,)),
          CustomQuery((1, 2), rng.uniform(-1, 1, (2, 4))),
          CustomQuery((0, 1, 2), rng.uniform(-1, 1, (3, 2, 4)))]
    for q in qs:
        assert factored_evaluate(q, d) == pytest.approx(evaluate(q, h), abs=1e-9)


def test_factored_update_matches_explicit_update(mixed_schema, rng):
    d = FactoredDistribution(mixed_schema, 30.0)
    h = export_histogram(d)
    for q, target in [(CellQuery((0,), (2,)), 20.0), (RangeQuery((1, 2), [(0, 0), (1, 3)]), 5.0),
                      (CustomQuery((0, 1), rng.uniform(-1, 1, (3, 2))), -3.0)]:
        factored_mw_update(d, q, target)
        h = mw_update(h, q, target)
        assert np.allclose(export_histogram(d).weights, h.weights, atol=1e-9)
    assert len(d.history) == 3
    q, m, scale = d.history[0]
    assert m == 20.0 and scale == pytest.approx(20.0 - 10.0)


def test_partition_update_targets():
    p = partition_update(AttributePartition(4), ParityQuery((1, 3)))
    assert p.part_of(3) == (1, 3)
    with pytest.raises(DomainError):
        partition_update("nope", ParityQuery((0,)))


def test_copy_is_independent(mixed_schema):
    d = FactoredDistribution(mixed_schema, 5.0)
    c = d.copy()
    factored_mw_update(c, CellQuery((0,), (0,)), 5.0)
    assert np.allclose(d.tables[(0,)], 1 / 3)


def _binary_data(rng, d=6, n=500):
    schema = AttributeSchema.binary(d)
    table = RecordTable(schema, correlated_rows(n, d, rng))
    return table, histogram_from_records(table)


def test_factored_run_matches_explicit_run(rng):
    table, hist = _binary_data(rng)
    wl = Workload([ParityQuery(s) for s in [(0,), (1,), (0, 1), (2, 3), (4,), (1, 4, 5)]])
    cfg = MwemConfig(T=4, epsilon=3.0, replay_passes=10)
    a = run_mwem(hist, wl, cfg, rng=9)
    b = run_mwem_factored(table, wl, cfg, rng=9)
    assert a.history.queries == b.history.queries
    assert np.allclose(export_histogram(b.synthetic).weights, a.synthetic.weights, atol=1e-9)
    assert b.trace.touches == 8 and b.ledger.total == pytest.approx(3.0, abs=1e-12)
    assert b.trace.peak_entries >= b.synthetic.entries


def test_factored_cuboid_run_matches_explicit(rng):
    table, hist = _binary_data(rng, d=5)
    groups = cuboid_workload(hist.universe, 2)
    cfg = MwemConfig(T=3, epsilon=4.0)
    a = run_mwem_cuboids(hist, groups, cfg, rng=1)
    b = run_mwem_factored(table, groups, cfg, rng=1)
    assert a.history.queries == b.history.queries
    assert np.allclose(export_histogram(b.synthetic).weights, a.synthetic.weights, atol=1e-9)


def test_factored_run_rejects_unsupported_modes(rng):
    table, _ = _binary_data(rng)
    wl = Workload([ParityQuery((0,)), ParityQuery((1,))])
    with pytest.raises(ConfigError):
        run_mwem_factored(table, wl, MwemConfig(T=1, epsilon=1.0, output_mode="average"))
    with pytest.raises(ConfigError):
        run_mwem_factored(table, wl, MwemConfig(T=1, epsilon=1.0, histogram_init_fraction=0.1))


def test_factored_handles_domains_too_large_to_enumerate(rng):
    d = 60
    schema = AttributeSchema.binary(d)
    table = RecordTable(schema, (rng.random((2000, d)) < 0.2).astype(np.uint8))
    wl = Workload([CellQuery((a,), (1,)) for a in range(d)])
    res = run_mwem_factored(table, wl, MwemConfig(T=20, epsilon=5.0), rng=0)
    assert res.trace.peak_entries <= 2 * d
    truth = table.rows.sum(axis=0)
    err = [abs(factored_evaluate(wl[j], res.synthetic) - truth[j]) for j in res.history.queries]
    assert max(err) < 0.3 * len(table)          # measured attributes left uniform (1000) move
    with pytest.raises(ResourceError):
        export_histogram(res.synthetic)
