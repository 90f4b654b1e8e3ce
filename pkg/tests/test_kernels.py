"""Both kernel sets agree on random inputs, whichever one is active."""
import numpy as np
import pytest

from mwem import kernels

numba_only = pytest.mark.skipif(kernels.NUMBA is None, reason="numba not installed")


def both(name):
    return kernels.NUMBA[name], kernels.NUMPY[name]


@numba_only
def test_scan_select(rng):
    fast, ref = both("scan_select")
    w = rng.random(50)
    for t in rng.random(200) * w.sum():
        assert fast(w, t) == ref(w, t)
    assert fast(w, w.sum() * 2) == ref(w, w.sum() * 2) == 49


@numba_only
@pytest.mark.parametrize("values", [(0.0, 1.0), (-1.0, 0.0, 1.0), None])
def test_mw_scale(rng, values):
    fast, ref = both("mw_scale")
    w = rng.random(300)
    v = rng.uniform(-1, 1, 300) if values is None else rng.choice(values, 300)
    a, b = w.copy(), w.copy()
    fast(a, v, 0.37, 5.0)
    ref(b, v, 0.37, 5.0)
    assert np.allclose(a, b, rtol=1e-12) and a.sum() == pytest.approx(5.0)


@numba_only
def test_replay_parts(rng):
    fast, ref = both("replay_parts")
    sizes = np.array([2, 4, 8, 3])
    off = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    flat = np.concatenate([rng.dirichlet(np.ones(s)) for s in sizes])
    counts = np.array([2, 0, 3, 1])
    ptr = np.concatenate([[0], np.cumsum(counts)])
    owner = np.repeat(np.arange(4), counts)
    vecs = [rng.choice([-1.0, 0.0, 1.0], sizes[p]) if k % 2 else rng.uniform(-1, 1, sizes[p])
            for k, p in enumerate(owner)]
    voff = np.concatenate([[0], np.cumsum([len(v) for v in vecs])[:-1]])
    targets = rng.uniform(-0.5, 0.5, len(vecs))
    a, b = flat.copy(), flat.copy()
    args = (off, sizes, ptr, voff, np.concatenate(vecs), targets, 7, 1.0)
    fast(a, *args)
    ref(b, *args)
    assert np.allclose(a, b, atol=1e-12)
    for o, s in zip(off, sizes):
        assert a[o:o + s].sum() == pytest.approx(1.0)


@numba_only
def test_segment_products(rng):
    fast, ref = both("segment_products")
    src = rng.random(20)
    gather = rng.integers(0, 20, 12)
    seg_vals = rng.uniform(-1, 1, 12)
    seg_ptr = np.array([0, 3, 5, 9, 12])
    q_ptr = np.array([0, 2, 4])
    assert np.allclose(fast(src, gather, seg_vals, seg_ptr, q_ptr),
                       ref(src, gather, seg_vals, seg_ptr, q_ptr))


@numba_only
def test_marginals(rng):
    fast, ref = both("marginals")
    cards = np.array([2, 3, 4])
    table = rng.random(24)
    key_axes = np.array([0, 2, 1, 0, 1, 2])
    key_ptr = np.array([0, 2, 3, 6])
    lengths = np.array([8, 3, 24])
    out_off = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    out_len = int(lengths.sum())
    a = fast(table, cards, key_axes, key_ptr, out_off, out_len)
    b = ref(table, cards, key_axes, key_ptr, out_off, out_len)
    assert np.allclose(a, b)
    t = table.reshape(2, 3, 4)
    assert np.allclose(b[:8], t.sum(axis=1).reshape(-1))
    assert np.allclose(b[8:11], t.sum(axis=(0, 2)))


@numba_only
def test_product_counts(rng):
    fast, ref = both("product_counts")
    rows = np.asfortranarray(rng.integers(0, 3, (100, 4)).astype(np.uint8))
    term_ptr = np.array([0, 2, 3])
    term_attr = np.array([0, 3, 1])
    term_off = np.array([0, 3, 6])
    fvals = rng.uniform(-1, 1, 9)
    a = fast(rows, term_ptr, term_attr, term_off, fvals)
    b = ref(rows, term_ptr, term_attr, term_off, fvals)
    assert np.allclose(a, b)
    expected = (fvals[rows[:, 0]] * fvals[3 + rows[:, 3]]).sum()
    assert a[0] == pytest.approx(expected)


def test_backend_flag():
    assert kernels.backend() in ("numba", "numpy")
    assert set(kernels.NUMPY) == {"scan_select", "mw_scale", "replay_parts", "segment_products",
                                  "marginals", "product_counts"}
