"""Property tests over randomly generated domains, histograms and queries."""
import math

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mwem import kernels
from mwem.core import Candidates, mw_update
from mwem.domain import AttributeSchema, Histogram, RecordTable, Universe, index_of, tuple_of
from mwem.factored import FactoredDistribution, export_histogram, factored_evaluate
from mwem.io import binarize, decode_bits, encode_bits
from mwem.mech import BudgetLedger, exponential_probabilities
from mwem.metrics import relative_entropy
from mwem.query import CellQuery, CuboidGroup, CustomQuery, ParityQuery, RangeQuery, evaluate

SETTINGS = settings(max_examples=60, deadline=None)

shapes = st.lists(st.integers(2, 4), min_size=1, max_size=4).map(tuple)


@st.composite
def histogram(draw, shape=None):
    shape = draw(shapes) if shape is None else shape
    u = Universe(AttributeSchema.from_shape(shape))
    w = draw(arrays(np.float64, u.size, elements=st.floats(0.01, 100.0)))
    return Histogram(u, w)


@st.composite
def query(draw, shape):
    d = len(shape)
    attrs = draw(st.lists(st.integers(0, d - 1), min_size=1, max_size=d, unique=True))
    kind = draw(st.sampled_from(["range", "cell", "custom", "parity"]))
    if kind == "parity" and all(shape[a] == 2 for a in attrs):
        return ParityQuery(attrs)
    if kind == "range":
        ivs = []
        for a in attrs:
            lo = draw(st.integers(0, shape[a] - 1))
            ivs.append((lo, draw(st.integers(lo, shape[a] - 1))))
        return RangeQuery(attrs, ivs)
    if kind == "custom":
        t = draw(arrays(np.float64, tuple(shape[a] for a in attrs), elements=st.floats(-1, 1)))
        return CustomQuery(attrs, t)
    return CellQuery(attrs, [draw(st.integers(0, shape[a] - 1)) for a in attrs])


@st.composite
def hist_and_query(draw):
    h = draw(histogram())
    return h, draw(query(h.universe.shape))


@SETTINGS
@given(shapes, st.data())
def test_index_round_trip(shape, data):
    u = Universe(AttributeSchema.from_shape(shape))
    i = data.draw(st.integers(0, u.size - 1))
    assert index_of(u, tuple_of(u, i)) == i


@SETTINGS
@given(hist_and_query(), st.floats(-1.0, 1.0))
def test_mw_update_moves_toward_target_without_overshoot(hq, frac):
    h, q = hq
    n = h.mass
    target = frac * n
    before = evaluate(q, h)
    out = mw_update(h, q, target)
    after = evaluate(q, out)
    assert math.isclose(out.mass, n, rel_tol=1e-9)
    assert np.all(out.weights > 0)
    assert abs(after - target) <= abs(before - target) + 1e-9 * n
    assert (after - before) * (target - before) >= -1e-9 * n * n


@SETTINGS
@given(hist_and_query(), st.floats(0.1, 5.0), st.floats(0.1, 5.0))
def test_queries_are_linear(hq, a, b):
    h, q = hq
    h2 = Histogram(h.universe, h.weights[::-1].copy())
    mix = Histogram(h.universe, a * h.weights + b * h2.weights)
    assert math.isclose(evaluate(q, mix), a * evaluate(q, h) + b * evaluate(q, h2),
                        rel_tol=1e-9, abs_tol=1e-9)


@SETTINGS
@given(st.data())
def test_factored_evaluation_matches_export(data):
    shape = data.draw(shapes)
    d = len(shape)
    schema = AttributeSchema.from_shape(shape)
    # random partition: attribute a joins the part of an earlier attribute or starts its own
    root = []
    for a in range(d):
        o = data.draw(st.integers(0, a))
        root.append(a if o == a else root[o])
    groups = {}
    for a, r in enumerate(root):
        groups.setdefault(r, []).append(a)
    tables = {}
    for attrs in groups.values():
        size = int(np.prod([shape[a] for a in attrs]))
        p = data.draw(arrays(np.float64, size, elements=st.floats(0.01, 1.0)))
        tables[tuple(attrs)] = (p / p.sum()).reshape([shape[a] for a in attrs])
    mass = data.draw(st.floats(1.0, 1000.0))
    dist = FactoredDistribution(schema, mass, tables)
    h = export_histogram(dist)
    q = data.draw(query(shape))
    assert math.isclose(factored_evaluate(q, dist), evaluate(q, h), rel_tol=1e-9, abs_tol=1e-9)


@SETTINGS
@given(histogram(), st.data())
def test_relative_entropy_is_nonnegative_and_zero_on_self(h, data):
    other = data.draw(arrays(np.float64, h.universe.size, elements=st.floats(0.01, 100.0)))
    A = Histogram(h.universe, other * (h.mass / other.sum()))
    assert relative_entropy(h, A) >= -1e-12
    assert relative_entropy(h, h) == 0.0


@SETTINGS
@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=60))
def test_ledger_total_is_exact_sum(charges):
    led = BudgetLedger(sum(charges) * 2)
    for c in charges:
        led.charge("c", c)
    assert led.total == math.fsum(charges)
    assert led.total <= led.cap


@SETTINGS
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-50, 50)),
       st.floats(0.01, 10.0), st.floats(-100, 100))
def test_exponential_probabilities_properties(scores, eps, shift):
    p = exponential_probabilities(scores, eps)
    assert math.isclose(p.sum(), 1.0, rel_tol=1e-12)
    order = np.argsort(scores, kind="stable")
    assert np.all(np.diff(p[order]) >= -1e-15)
    assert np.allclose(exponential_probabilities(scores + shift, eps), p, rtol=1e-9, atol=1e-300)


@SETTINGS
@given(st.integers(1, 12), st.data())
def test_bits_round_trip(width, data):
    v = data.draw(st.integers(0, 2 ** width - 1))
    bits = encode_bits(v, width)
    assert len(bits) == width and decode_bits(bits) == v


@SETTINGS
@given(shapes, st.data())
def test_binarize_is_injective_on_rows(shape, data):
    schema = AttributeSchema.from_shape(shape)
    n = data.draw(st.integers(1, 20))
    rows = np.array([[data.draw(st.integers(0, c - 1)) for c in shape] for _ in range(n)])
    table = RecordTable(schema, rows)
    for strategy in ("bitwise-log", "one-hot"):
        out = binarize(table, strategy).rows
        same_in = (rows[:, None, :] == rows[None, :, :]).all(axis=2)
        same_out = (out[:, None, :] == out[None, :, :]).all(axis=2)
        assert np.array_equal(same_in, same_out)


@SETTINGS
@given(histogram(shape=(2, 3, 2)), st.data())
def test_cuboid_scores_sum_cell_errors(h, data):
    schema = h.schema
    groups = [CuboidGroup.over(schema, s) for s in ((0,), (1, 2), (0, 1, 2))]
    cands = Candidates.from_cuboids(groups)
    approx = data.draw(arrays(np.float64, len(cands.cells), elements=st.floats(0, 50)))
    truth = data.draw(arrays(np.float64, len(cands.cells), elements=st.floats(0, 50)))
    s = cands.scores(approx, truth)
    for c, g in enumerate(groups):
        idx = cands.members(c)
        assert math.isclose(s[c], np.abs(approx[idx] - truth[idx]).sum() - len(g),
                            rel_tol=1e-12, abs_tol=1e-9)


@SETTINGS
@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(0.001, 10.0)),
       st.sampled_from(["binary", "signed", "general"]), st.floats(-2.0, 2.0), st.data())
def test_mw_scale_backends_agree(w, kind, eta, data):
    n = w.shape[0]
    pool = {"binary": [0.0, 1.0], "signed": [-1.0, 0.0, 1.0]}.get(kind)
    if pool is None:
        v = data.draw(arrays(np.float64, n, elements=st.floats(-1, 1)))
    else:
        v = np.array([data.draw(st.sampled_from(pool)) for _ in range(n)])
    ref = w.copy()
    kernels.NUMPY["mw_scale"](ref, v, eta, 3.0)
    out = w.copy()
    kernels.mw_scale(out, v, eta, 3.0)
    assert np.allclose(out, ref, rtol=1e-10, atol=1e-300)
