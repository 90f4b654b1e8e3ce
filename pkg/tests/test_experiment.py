import csv
import json

import numpy as np
import pytest

from mwem.cli import main
from mwem.errors import ConfigError
from mwem.experiment import (
    BenchConfig,
    ExperimentConfig,
    aggregate,
    bench,
    build_workload,
    run_experiment,
    sweep,
    synthetic_binary,
)
from mwem.domain import AttributeSchema
from mwem.io import read_header
from mwem.query import CuboidGroup, Workload


@pytest.fixture
def data(tmp_path, rng):
    rows = (rng.random((300, 4)) < [0.2, 0.5, 0.7, 0.4]).astype(int)
    rows[:, 1] = rows[:, 0] ^ (rng.random(300) < 0.1)
    path = tmp_path / "data.csv"
    np.savetxt(path, rows, fmt="%d", delimiter=",", header="a,b,c,d", comments="")
    return path


def read_rows(path):
    with open(path) as f:
        return list(csv.reader(line for line in f if not line.startswith("#")))


def test_config_round_trip_and_validation(tmp_path):
    cfg = ExperimentConfig(input="x.csv", T=3)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig(mode="other")
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_build_workload_specs():
    schema = AttributeSchema.binary(3)
    assert len(build_workload("range:7", schema, 0)) == 7
    assert len(build_workload("parity:2", schema)) == 6
    groups = build_workload("cuboid:2", schema)
    assert all(isinstance(g, CuboidGroup) for g in groups) and len(groups) == 6
    cells = build_workload("cells:1", schema)
    assert isinstance(cells, Workload) and len(cells) == 6
    with pytest.raises(ConfigError):
        build_workload("range:x", schema)
    with pytest.raises(ConfigError):
        build_workload("nothing", schema)


def test_run_writes_reports_with_headers(data, tmp_path):
    out = tmp_path / "out"
    cfg = ExperimentConfig(input=str(data), workload="range:30", T=4, reps=3, seed=10,
                           out=str(out), export="weighted")
    res = run_experiment(cfg)
    for name in ("report.csv", "aggregate.csv", "synthetic.csv"):
        meta = read_header(out / name)
        assert meta["seed"] == 10 and meta["config"]["T"] == 4
    rows = read_rows(out / "report.csv")
    assert rows[0] == ["rep", "seed", "metric", "value"]
    assert {r[1] for r in rows[1:]} == {"10", "11", "12"}
    trace = json.loads((out / "trace.json").read_text())
    assert len(trace["repetitions"]) == 3
    assert "true_score" not in trace["repetitions"][0]["trace"]["rounds"][0]
    assert res["aggregate"]["epsilon_spent"] == (pytest.approx(1.0), 0.0)


def test_reps_are_reproducible(data, tmp_path):
    cfg = ExperimentConfig(input=str(data), workload="parity:2", T=3, reps=2,
                           out=str(tmp_path / "a"))
    a = run_experiment(cfg)["aggregate"]
    b = run_experiment(ExperimentConfig(**{**cfg.to_dict(), "out": str(tmp_path / "b")}))
    b = b["aggregate"]
    for name in a:
        if not name.startswith("seconds"):
            assert a[name] == b[name]


def test_diagnostics_flow_into_trace(data, tmp_path):
    cfg = ExperimentConfig(input=str(data), workload="range:20", T=2, diagnostics=True,
                           out=str(tmp_path / "d"))
    run_experiment(cfg)
    trace = json.loads((tmp_path / "d" / "trace.json").read_text())
    assert "true_score" in trace["repetitions"][0]["trace"]["rounds"][0]


def test_factored_and_baseline_runs(data, tmp_path):
    r = run_experiment(ExperimentConfig(input=str(data), mode="factored", workload="cuboid:2",
                                        T=3, out=str(tmp_path / "f"), export="sampled"))
    assert "peak_entries" in r["aggregate"] and "cuboid_max_error" in r["aggregate"]
    r = run_experiment(ExperimentConfig(input=str(data), algorithm="baseline",
                                        workload="parity:2", out=str(tmp_path / "b")))
    assert r["aggregate"]["epsilon_spent"][0] == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(input=str(data), algorithm="baseline",
                                        workload="range:4", out=str(tmp_path / "c")))


def test_aggregate():
    agg = aggregate([{"metrics": {"x": 1.0}}, {"metrics": {"x": 3.0}}])
    assert agg["x"] == (2.0, pytest.approx(np.sqrt(2)))


def test_sweep_grid(data, tmp_path):
    rows = sweep(ExperimentConfig(input=str(data), T=2, out=str(tmp_path / "s")),
                 {"epsilon": [0.5, 1.0], "T": [1, 2]})
    assert len(rows) == 4
    table = read_rows(tmp_path / "s" / "aggregate.csv")
    assert table[0][:2] == ["epsilon", "T"] and len(table) == 5
    with pytest.raises(ConfigError):
        sweep(ExperimentConfig(input=str(data)), {"nope": [1]})


def test_bench_and_generator(tmp_path):
    t = synthetic_binary(5000, 8, 0.1, 0)
    assert t.rows.mean() == pytest.approx(0.1, abs=0.01)
    rows = bench(BenchConfig(attributes=[5, 10], records=500, out=str(tmp_path / "b")))
    assert [r["T"] for r in rows] == [5, 10]
    assert all(r["peak_entries"] <= 2 * r["attributes"] for r in rows)


def test_cli_commands(data, tmp_path, capsys):
    out = tmp_path / "cli"
    assert main(["run", "--input", str(data), "--workload", "range:10", "--T", "2",
                 "--reps", "2", "--out", str(out)]) == 0
    assert "max_error" in capsys.readouterr().out
    assert main(["sweep", "--input", str(data), "--T", "1", "--grid", "epsilon=0.5,1",
                 "--out", str(tmp_path / "sw")]) == 0
    assert main(["export", "--input", str(data), "--workload", "range:10", "--T", "2",
                 "--format", "weighted", "--out", str(tmp_path / "ex")]) == 0
    assert (tmp_path / "ex" / "synthetic.csv").exists()
    assert main(["bench", "--attributes", "4", "--records", "100",
                 "--out", str(tmp_path / "bn")]) == 0


def test_cli_config_file_and_overrides(data, tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"input": str(data), "workload": "range:10", "T": 2,
                                "out": str(tmp_path / "x")}))
    assert main(["run", "--config", str(path), "--T", "3"]) == 0
    assert read_header(tmp_path / "x" / "report.csv")["config"]["T"] == 3


def test_cli_exit_codes(data, tmp_path, capsys):
    assert main(["run", "--input", str(data), "--epsilon", "-1", "--out", str(tmp_path)]) == 2
    assert main(["run", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 2
    assert main(["run", "--input", str(data), "--workload", "range:3", "--T", "5",
                 "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--input", str(data), "--grid", "epsilon", "--out", str(tmp_path)]) == 2
    # an explicit run over 2^30 elements is past the size cap
    wide = tmp_path / "wide.csv"
    np.savetxt(wide, np.zeros((10, 30), dtype=int), fmt="%d", delimiter=",",
               header=",".join(f"a{i}" for i in range(30)), comments="")
    assert main(["run", "--input", str(wide), "--workload", "range:5", "--T", "1",
                 "--out", str(tmp_path / "w")]) == 3
    assert "error" in capsys.readouterr().err
