"""Seeded experiment runs, parameter sweeps and the scaling bench.

Every output file starts with a ``# {json}`` line holding the full
configuration and base seed, so any result can be regenerated.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baseline import BaselineConfig, run_baseline
from .core import MwemConfig, run_mwem, run_mwem_cuboids
from .domain import AttributeSchema, RecordTable, Universe, histogram_from_records
from .errors import ConfigError
from .factored import export_histogram, run_mwem_factored
from .io import SchemaSpec, export_synthetic, header_line, infer_schema, ingest_csv, load_schema
from .mech import eps_delta_recharacterize, make_rng
from .metrics import avg_squared_error, cuboid_errors, relative_entropy
from .query import (
    Workload,
    cuboid_workload,
    load_workload,
    parity_workload,
    random_range_workload,
)

log = logging.getLogger(__name__)

#: Largest domain for which the explicit-only metrics (relative entropy) are reported.
METRIC_CAP = 2 ** 22


@dataclass
class ExperimentConfig:
    input: str = ""
    schema: str | None = None          # schema file; None infers from the data
    mode: str = "explicit"             # explicit | factored
    algorithm: str = "mwem"            # mwem | baseline
    workload: str = "range:100"        # range:N | parity:K | cuboid:K | cells:K | path to JSON
    epsilon: float = 1.0
    delta: float = 0.0
    T: int = 10
    seed: int = 0
    reps: int = 1
    out: str = "results"
    diagnostics: bool = False
    output_mode: str = "last"
    replay_passes: int = 100
    histogram_init_fraction: float = 0.0
    adaptive_T: bool = False
    measurement_clamp: bool = True
    binarize: str | None = None        # bitwise-log | one-hot
    export: str | None = None          # weighted | sampled
    jobs: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.mode not in ("explicit", "factored"):
            raise ConfigError(f"mode must be explicit or factored, got {self.mode!r}")
        if self.algorithm not in ("mwem", "baseline"):
            raise ConfigError(f"algorithm must be mwem or baseline, got {self.algorithm!r}")
        if self.export not in (None, "weighted", "sampled"):
            raise ConfigError(f"export must be weighted or sampled, got {self.export!r}")
        if not 0 <= self.delta < 1:
            raise ConfigError("delta must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    def mwem_config(self) -> MwemConfig:
        return MwemConfig(
            T=self.T, epsilon=self.epsilon, output_mode=self.output_mode,
            replay_passes=self.replay_passes,
            histogram_init_fraction=self.histogram_init_fraction,
            adaptive_T=self.adaptive_T, measurement_clamp=self.measurement_clamp,
            diagnostics=self.diagnostics,
        )


def load_data(config: ExperimentConfig) -> tuple[RecordTable, SchemaSpec]:
    if not config.input:
        raise ConfigError("no input file given")
    spec = load_schema(config.schema) if config.schema else infer_schema(config.input)
    table = ingest_csv(config.input, spec)
    if config.binarize:
        from .io import binarize

        table = binarize(table, config.binarize)
        spec = SchemaSpec.plain(table.schema)
    return table, spec


def build_workload(spec: str, schema: AttributeSchema, rng=None):
    """A Workload, or a list of CuboidGroup for ``cuboid:K``."""
    universe = Universe(schema)
    kind, _, arg = spec.partition(":")
    if kind in ("range", "parity", "cuboid", "cells") and arg:
        try:
            k = int(arg)
        except ValueError:
            raise ConfigError(f"workload {spec!r}: {arg!r} is not an integer") from None
        if kind == "range":
            return random_range_workload(universe, k, make_rng(rng))
        if kind == "parity":
            return parity_workload(universe, k)
        groups = cuboid_workload(universe, min(k, len(schema)))
        if kind == "cuboid":
            return groups
        return Workload([c for g in groups for c in g.cells], spec)
    if Path(spec).exists():
        return load_workload(spec, schema)
    raise ConfigError(f"unknown workload {spec!r}; use range:N, parity:K, cuboid:K, cells:K or a file")


def _flat(workload) -> Workload:
    return workload if isinstance(workload, Workload) else \
        Workload([c for g in workload for c in g.cells])


def run_once(config: ExperimentConfig, table: RecordTable, workload, seed: int) -> dict:
    """One repetition; returns metrics, the private trace, and the synthetic output."""
    rng = make_rng(seed)
    flat = _flat(workload)
    explicit_ok = Universe(table.schema).size <= METRIC_CAP
    if config.mode == "explicit" or config.algorithm == "baseline":
        truth = histogram_from_records(table)       # ResourceError past the explicit cap
    else:
        truth = histogram_from_records(table) if explicit_ok else None
    if config.algorithm == "baseline":
        base = run_baseline(truth, BaselineConfig(_parity_order(config.workload), config.epsilon,
                                                  config.replay_passes,
                                                  config.measurement_clamp), rng)
        synthetic, history, ledger, trace = base.synthetic, base.history, base.ledger, None
    else:
        cfg = config.mwem_config()
        if config.mode == "factored":
            res = run_mwem_factored(table, workload, cfg, rng)
        elif isinstance(workload, Workload):
            res = run_mwem(truth, workload, cfg, rng)
        else:
            res = run_mwem_cuboids(truth, workload, cfg, rng)
        synthetic, history, trace, ledger = res
    if config.mode == "factored" and config.algorithm == "mwem":
        from .factored import factored_evaluate

        approx = np.array([factored_evaluate(q, synthetic) for q in flat])
    else:
        approx = flat.evaluate(synthetic)
    true_answers = flat.evaluate_rows(table.rows, table.schema)
    gaps = np.abs(approx - true_answers)
    metrics = {
        "max_error": float(gaps.max()),
        "mean_error": float(gaps.mean()),
        "avg_squared_error": avg_squared_error(flat, approx, true_answers),
        "epsilon_spent": ledger.total,
    }
    if config.delta > 0:
        metrics["epsilon_delta"] = eps_delta_recharacterize(config.epsilon, config.T, config.delta)
    if truth is not None:
        hist = synthetic if config.mode == "explicit" or config.algorithm == "baseline" \
            else export_histogram(synthetic)
        metrics["relative_entropy"] = relative_entropy(truth, hist) if hist.mass > 0 else math.nan
        if not isinstance(workload, Workload):
            rep = cuboid_errors(workload, hist, truth)
            metrics["cuboid_max_error"] = rep.max
            metrics["cuboid_mean_error"] = rep.mean
    if trace is not None:
        metrics["touches"] = trace.touches
        metrics["seconds_total"] = trace.seconds_total
        metrics["seconds_mw"] = trace.seconds_mw
        if config.mode == "factored":
            metrics["peak_entries"] = trace.peak_entries
    return {
        "seed": seed,
        "metrics": metrics,
        "history": history.to_list(),
        "trace": trace.to_dict() if trace is not None else None,
        "ledger": ledger.to_list(),
        "synthetic": synthetic,
    }


def _parity_order(spec: str) -> int:
    kind, _, arg = spec.partition(":")
    if kind != "parity":
        raise ConfigError("the baseline measures parity queries; use a parity:K workload")
    return int(arg)


def _rep_job(args):
    config, table, workload, seed = args
    return run_once(config, table, workload, seed)


def run_reps(config: ExperimentConfig, table: RecordTable, workload) -> list[dict]:
    seeds = [config.seed + i for i in range(config.reps)]
    jobs = [(config, table, workload, s) for s in seeds]
    if config.jobs > 1 and config.reps > 1:
        # spawn, not fork: the compiled kernels may already hold an OpenMP runtime
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=config.jobs, mp_context=ctx) as pool:
            return list(pool.map(_rep_job, jobs))
    out = []
    for j in jobs:
        out.append(_rep_job(j))
        log.info("seed %d: max_error %.4g", j[3], out[-1]["metrics"]["max_error"])
    return out


def aggregate(results: list[dict]) -> dict:
    """Mean and sample standard deviation of each metric across repetitions."""
    names = sorted({k for r in results for k in r["metrics"]})
    out = {}
    for name in names:
        vals = np.array([r["metrics"].get(name, math.nan) for r in results], dtype=float)
        out[name] = (float(np.mean(vals)), float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0)
    return out


def _write_csv(path: Path, meta: dict, header: list, rows: list):
    with open(path, "w", newline="") as f:
        f.write(header_line(meta))
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def run_experiment(config: ExperimentConfig) -> dict:
    """Run all repetitions and write report.csv, aggregate.csv, trace.json (and synthetic.csv)."""
    table, spec = load_data(config)
    workload = build_workload(config.workload, table.schema, config.seed)
    results = run_reps(config, table, workload)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config": config.to_dict(), "seed": config.seed}
    _write_csv(out / "report.csv", meta, ["rep", "seed", "metric", "value"],
               [[i, r["seed"], k, repr(v)] for i, r in enumerate(results)
                for k, v in sorted(r["metrics"].items())])
    agg = aggregate(results)
    _write_csv(out / "aggregate.csv", meta, ["metric", "mean", "std", "reps"],
               [[k, repr(m), repr(s), len(results)] for k, (m, s) in agg.items()])
    bundle = dict(meta)
    bundle["repetitions"] = [{k: r[k] for k in ("seed", "metrics", "history", "trace", "ledger")}
                             for r in results]
    (out / "trace.json").write_text(json.dumps(bundle, indent=1, default=_json_default))
    if config.export:
        export_synthetic(results[0]["synthetic"], out / "synthetic.csv", config.export,
                         rng=config.seed, meta=meta, codecs=spec)
    return {"results": results, "aggregate": agg, "out": str(out)}


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def sweep(config: ExperimentConfig, grid: dict) -> list[dict]:
    """One aggregate row per point of the parameter grid, written to aggregate.csv."""
    for k in grid:
        if k not in {f.name for f in fields(ExperimentConfig)}:
            raise ConfigError(f"cannot sweep unknown parameter {k!r}")
    table, _ = load_data(config)
    keys = list(grid)
    rows, out_rows = [], []
    metric_names: list = []
    for values in itertools.product(*(grid[k] for k in keys)):
        point = replace(config, **dict(zip(keys, values)))
        workload = build_workload(point.workload, table.schema, point.seed)
        agg = aggregate(run_reps(point, table, workload))
        rows.append({"params": dict(zip(keys, values)), "aggregate": agg})
        metric_names = sorted(set(metric_names) | set(agg))
    for r in rows:
        line = [r["params"][k] for k in keys]
        for m in metric_names:
            line += list(r["aggregate"].get(m, (math.nan, math.nan)))
        out_rows.append(line)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    header = keys + [f"{m}_{s}" for m in metric_names for s in ("mean", "std")]
    _write_csv(out / "aggregate.csv", {"config": config.to_dict(), "grid": grid,
                                       "seed": config.seed}, header, out_rows)
    return rows


def synthetic_binary(n: int, d: int, p: float = 0.1, rng=None) -> RecordTable:
    """n records over d binary attributes, each set independently with probability p."""
    rng = make_rng(rng)
    return RecordTable(AttributeSchema.binary(d), (rng.random((n, d)) < p).astype(np.uint8))


@dataclass
class BenchConfig:
    attributes: list = field(default_factory=lambda: [100, 200, 400, 800, 1000])
    records: int = 100_000
    p: float = 0.1
    T: int | None = None               # None: T equals the attribute count
    epsilon: float = 1.0
    seed: int = 0
    out: str = "bench"


def bench(config: BenchConfig) -> list[dict]:
    """Factored MWEM on synthetic binary data with one ``attr = 1`` query per attribute."""
    from .query import CellQuery

    rows = []
    for d in config.attributes:
        table = synthetic_binary(config.records, d, config.p, config.seed)
        workload = Workload([CellQuery((a,), (1,)) for a in range(d)], f"cells:1 over {d}")
        T = config.T or d
        res = run_mwem_factored(table, workload, MwemConfig(T=T, epsilon=config.epsilon),
                                config.seed)
        tr = res.trace
        rows.append({"attributes": d, "T": T, "seconds_total": tr.seconds_total,
                     "seconds_mw": tr.seconds_mw, "seconds_sensitive": tr.seconds_sensitive,
                     "mw_seconds_per_round": tr.seconds_mw / T,
                     "peak_entries": tr.peak_entries, "parts": tr.parts})
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    header = list(rows[0]) if rows else []
    _write_csv(out / "bench.csv", {"config": asdict(config), "seed": config.seed}, header,
               [[r[k] for k in header] for r in rows])
    return rows
