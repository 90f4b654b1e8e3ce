"""Compiled kernels vs the pure-numpy fallback.

Runs each case in a fresh interpreter per backend (the backend is fixed at
import time by MWEM_NO_NUMBA) and prints wall time and whether the two
backends produced the same answers.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def case_explicit(quick):
    from mwem import MwemConfig, run_mwem
    from mwem.domain import AttributeSchema, RecordTable, histogram_from_records
    from mwem.query import Universe, random_range_workload

    d = 10 if quick else 14
    rng = np.random.default_rng(0)
    rows = (rng.random((5000, d)) < 0.3).astype(np.uint8)
    hist = histogram_from_records(RecordTable(AttributeSchema.binary(d), rows))
    wl = random_range_workload(Universe(hist.schema), 200, rng)
    res = run_mwem(hist, wl, MwemConfig(T=20, epsilon=1.0), 1)
    return wl.evaluate(res.synthetic)


def case_factored(quick):
    from mwem import MwemConfig
    from mwem.experiment import synthetic_binary
    from mwem.factored import factored_evaluate, run_mwem_factored
    from mwem.query import CellQuery, Workload

    d = 60 if quick else 200
    table = synthetic_binary(20_000, d, 0.1, 0)
    cells = [CellQuery((a,), (1,)) for a in range(d)]
    cells += [CellQuery((a, a + 1), (1, 1)) for a in range(0, d - 1, 2)]
    res = run_mwem_factored(table, Workload(cells), MwemConfig(T=d // 2, epsilon=5.0), 1)
    return np.array([factored_evaluate(q, res.synthetic) for q in cells])


CASES = {"explicit": case_explicit, "factored": case_factored}


def child(name, repeat, quick):
    from mwem import kernels

    fn = CASES[name]
    t0 = time.perf_counter()
    answers = fn(quick)  # first call includes compilation
    first = time.perf_counter() - t0
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(quick)
        times.append(time.perf_counter() - t0)
    print(json.dumps({"backend": kernels.backend(), "first": first,
                      "best": min(times), "answers": answers.tolist()}))


def run_backend(name, numba, repeat, quick):
    env = dict(os.environ, MWEM_NO_NUMBA="0" if numba else "1")
    cmd = [sys.executable, __file__, "--child", name, "--repeat", str(repeat)]
    if quick:
        cmd.append("--quick")
    out = subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout
    return json.loads(out.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--child")
    args = ap.parse_args()
    if args.child:
        child(args.child, args.repeat, args.quick)
        return
    print(f"{'case':<10} {'backend':<7} {'first s':>9} {'best s':>9}")
    for name in CASES:
        res = {b: run_backend(name, b == "numba", args.repeat, args.quick) for b in ("numba", "numpy")}
        for b, r in res.items():
            print(f"{name:<10} {r['backend']:<7} {r['first']:9.3f} {r['best']:9.3f}")
        gap = np.max(np.abs(np.array(res["numba"]["answers"]) - np.array(res["numpy"]["answers"])))
        speedup = res["numpy"]["best"] / res["numba"]["best"]
        print(f"{name:<10} speedup {speedup:.1f}x, max answer gap {gap:.2e}")


if __name__ == "__main__":
    main()
