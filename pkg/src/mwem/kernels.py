"""Hot numeric loops.

Every kernel exists twice: a loop version compiled with numba and a
vectorized numpy version.  The numba versions are used when numba imports
and ``MWEM_NO_NUMBA`` is unset (or "0"); both produce the same results up
to floating point reassociation.  ``benchmarks/bench_kernels.py`` times
one against the other.

Array layouts shared by the kernels:

* parts: ``flat[part_off[p]:part_off[p] + part_size[p]]`` is the weight
  table of part p.  Explicit histograms are a single part.
* replay entries: entries ``ent_ptr[p]:ent_ptr[p+1]`` belong to part p, in
  history order; entry e has value vector
  ``vecs[ent_vec_off[e]:ent_vec_off[e] + part_size[p]]`` and target
  ``targets[e]``.
* segments: query j is the product over segments ``q_ptr[j]:q_ptr[j+1]``;
  segment s is ``sum(src[gather[k]] * seg_vals[k])`` for k in
  ``seg_ptr[s]:seg_ptr[s+1]``.
* marginals: a part table of shape ``cards`` in row-major order; key k
  sums it onto the axes
  ``key_axes[key_ptr[k]:key_ptr[k+1]]`` (sizes ``cards``), written to
  ``out[out_off[k]:]`` in row-major order.
* row terms: query j is the product over terms ``term_ptr[j]:term_ptr[j+1]``;
  term t reads ``fvals[term_off[t] + row[term_attr[t]]]``.
"""
import math
import os

import numpy as np

try:
    import numba
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover
    numba = None

DISABLED = os.environ.get("MWEM_NO_NUMBA", "0") not in ("", "0")
USE_NUMBA = numba is not None and not DISABLED


# ---------------------------------------------------------------- loops

def _scan_select_loop(weights, target):
    for i in range(weights.shape[0]):
        target -= weights[i]
        if target <= 0.0:
            return i
    return weights.shape[0] - 1


def _dot_odd(flat, off, size, vecs, voff):
    """``v . w`` and ``sum |v^3 - v|``, which is zero iff every entry is in {-1, 0, 1}."""
    q = 0.0
    odd = 0.0
    for i in range(size):
        vi = vecs[voff + i]
        q += vi * flat[off + i]
        odd += abs(vi * vi * vi - vi)
    return q, odd


def _mw_step(flat, off, size, vecs, voff, eta, pending, odd):
    """Scale ``flat[off:off+size]`` by ``pending * exp(v * eta)``; return the new total.

    Vectors with entries in {-1, 0, 1} (counting, range and parity queries)
    use the quadratic through (-1, e^-eta), (0, 1), (1, e^eta), which is
    branch free and lets the loop vectorize.
    """
    total = 0.0
    if odd == 0.0:
        up = math.exp(eta)
        down = 1.0 / up
        c1 = pending * 0.5 * (up - down)
        c2 = pending * (0.5 * (up + down) - 1.0)
        for i in range(size):
            vi = vecs[voff + i]
            x = flat[off + i] * (pending + vi * (c1 + c2 * vi))
            flat[off + i] = x
            total += x
    else:
        for i in range(size):
            x = flat[off + i] * (pending * math.exp(vecs[voff + i] * eta))
            flat[off + i] = x
            total += x
    return total


def _mw_scale_loop(w, v, eta, mass):
    odd = _dot_odd(w, 0, w.shape[0], v, 0)[1]
    total = _mw_step(w, 0, w.shape[0], v, 0, eta, 1.0, odd)
    scale = mass / total
    for i in range(w.shape[0]):
        w[i] *= scale


def _replay_parts_loop(flat, part_off, part_size, ent_ptr, ent_vec_off, vecs, targets,
                       passes, mass):
    for p in numba.prange(part_off.shape[0]):
        off = part_off[p]
        size = part_size[p]
        # Normalization is deferred: the true weights are flat * pending.
        pending = 1.0
        for _ in range(passes):
            for e in range(ent_ptr[p], ent_ptr[p + 1]):
                voff = ent_vec_off[e]
                q, odd = _dot_odd(flat, off, size, vecs, voff)
                eta = (targets[e] - pending * q) / (2.0 * mass)
                pending = mass / _mw_step(flat, off, size, vecs, voff, eta, pending, odd)
        for i in range(size):
            flat[off + i] *= pending


def _segment_products_loop(src, gather, seg_vals, seg_ptr, q_ptr):
    nq = q_ptr.shape[0] - 1
    out = np.ones(nq)
    for j in range(nq):
        prod = 1.0
        for s in range(q_ptr[j], q_ptr[j + 1]):
            acc = 0.0
            for k in range(seg_ptr[s], seg_ptr[s + 1]):
                acc += src[gather[k]] * seg_vals[k]
            prod *= acc
        out[j] = prod
    return out


def _marginals_loop(table, cards, key_axes, key_ptr, out_off, out_len):
    out = np.zeros(out_len)
    nd = cards.shape[0]
    for k in numba.prange(key_ptr.shape[0] - 1):
        base = out_off[k]
        digit = np.zeros(nd, dtype=np.int64)
        for i in range(table.shape[0]):
            idx = 0
            for t in range(key_ptr[k], key_ptr[k + 1]):
                ax = key_axes[t]
                idx = idx * cards[ax] + digit[ax]
            out[base + idx] += table[i]
            # advance the row-major odometer
            ax = nd - 1
            while ax >= 0:
                digit[ax] += 1
                if digit[ax] < cards[ax]:
                    break
                digit[ax] = 0
                ax -= 1
    return out


def _product_counts_loop(rows, term_ptr, term_attr, term_off, fvals):
    nq = term_ptr.shape[0] - 1
    n = rows.shape[0]
    out = np.zeros(nq)
    for j in numba.prange(nq):
        total = 0.0
        for r in range(n):
            prod = 1.0
            for t in range(term_ptr[j], term_ptr[j + 1]):
                prod *= fvals[term_off[t] + rows[r, term_attr[t]]]
                if prod == 0.0:
                    break
            total += prod
        out[j] = total
    return out


# ---------------------------------------------------------------- numpy

def _scan_select_np(weights, target):
    i = int(np.searchsorted(np.cumsum(weights), target, side="left"))
    return min(i, weights.shape[0] - 1)


def _mw_scale_np(w, v, eta, mass):
    w *= np.exp(v * eta)
    w *= mass / w.sum()


def _replay_parts_np(flat, part_off, part_size, ent_ptr, ent_vec_off, vecs, targets,
                     passes, mass):
    counts = np.diff(ent_ptr)
    if passes == 0 or counts.sum() == 0:
        return
    if part_off.shape[0] == 1:
        w = flat[part_off[0]:part_off[0] + part_size[0]]
        rows = [vecs[o:o + part_size[0]] for o in ent_vec_off]
        for _ in range(passes):
            for v, m in zip(rows, targets):
                _mw_scale_np(w, v, (m - v @ w) / (2.0 * mass), mass)
        return
    # Parts are independent, so the r-th entry of every part is applied in one
    # vectorized step; within a part the history order is kept.
    steps = []
    for r in range(int(counts.max())):
        parts = np.flatnonzero(counts > r)
        sizes = part_size[parts]
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        within = np.arange(sizes.sum()) - np.repeat(starts, sizes)
        idx = np.repeat(part_off[parts], sizes) + within
        ents = ent_ptr[parts] + r
        vidx = np.repeat(ent_vec_off[ents], sizes) + within
        steps.append((idx, vecs[vidx], targets[ents], starts, sizes))
    for _ in range(passes):
        for idx, v, tgt, starts, sizes in steps:
            w = flat[idx]
            q = np.add.reduceat(v * w, starts)
            eta = np.repeat((tgt - q) / (2.0 * mass), sizes)
            w = w * np.exp(v * eta)
            total = np.add.reduceat(w, starts)
            flat[idx] = w * np.repeat(mass / total, sizes)


def _segment_products_np(src, gather, seg_vals, seg_ptr, q_ptr):
    nq = q_ptr.shape[0] - 1
    out = np.ones(nq)
    if seg_ptr.shape[0] <= 1:
        return out
    seg = np.add.reduceat(src[gather] * seg_vals, seg_ptr[:-1])
    has = np.diff(q_ptr) > 0
    if has.any():
        out[has] = np.multiply.reduceat(seg, q_ptr[:-1][has])
    return out


def _marginals_np(table, cards, key_axes, key_ptr, out_off, out_len):
    out = np.zeros(out_len)
    strides = np.cumprod(np.concatenate([cards[1:], [1]])[::-1])[::-1]
    pos = np.arange(table.shape[0])
    for k in range(key_ptr.shape[0] - 1):
        idx = np.zeros(table.shape[0], dtype=np.int64)
        size = 1
        for ax in key_axes[key_ptr[k]:key_ptr[k + 1]]:
            idx = idx * cards[ax] + (pos // strides[ax]) % cards[ax]
            size *= cards[ax]
        out[out_off[k]:out_off[k] + size] = np.bincount(idx, weights=table, minlength=size)
    return out


def _product_counts_np(rows, term_ptr, term_attr, term_off, fvals):
    nq = term_ptr.shape[0] - 1
    out = np.zeros(nq)
    for j in range(nq):
        prod = np.ones(rows.shape[0])
        for t in range(term_ptr[j], term_ptr[j + 1]):
            prod *= fvals[term_off[t] + rows[:, term_attr[t]]]
        out[j] = prod.sum()
    return out


NUMPY = {
    "scan_select": _scan_select_np,
    "mw_scale": _mw_scale_np,
    "replay_parts": _replay_parts_np,
    "segment_products": _segment_products_np,
    "marginals": _marginals_np,
    "product_counts": _product_counts_np,
}

if numba is not None:
    # Reassociation lets the reductions vectorize; NaN and inf semantics are kept.
    _FAST = {"reassoc", "contract", "arcp", "nsz"}
    _dot_odd = numba.njit(cache=True, fastmath=_FAST)(_dot_odd)
    _mw_step = numba.njit(cache=True, fastmath=_FAST)(_mw_step)
    NUMBA = {
        "scan_select": numba.njit(cache=True)(_scan_select_loop),
        "mw_scale": numba.njit(cache=True, fastmath=_FAST)(_mw_scale_loop),
        "replay_parts": numba.njit(cache=True, parallel=True, fastmath=_FAST)(_replay_parts_loop),
        "segment_products": numba.njit(cache=True)(_segment_products_loop),
        "marginals": numba.njit(cache=True, parallel=True)(_marginals_loop),
        "product_counts": numba.njit(cache=True, parallel=True)(_product_counts_loop),
    }
else:  # pragma: no cover
    NUMBA = None

ACTIVE = NUMBA if USE_NUMBA else NUMPY

scan_select = ACTIVE["scan_select"]
mw_scale = ACTIVE["mw_scale"]
replay_parts = ACTIVE["replay_parts"]
segment_products = ACTIVE["segment_products"]
marginals = ACTIVE["marginals"]
product_counts = ACTIVE["product_counts"]


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
