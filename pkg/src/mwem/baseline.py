"""Uniform-accuracy baseline: measure every low-order parity query once, then
fit the measurements with multiplicative weights."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import History, HistoryEntry, mw_replay
from .domain import Histogram, uniform_histogram
from .errors import ConfigError
from .mech import BudgetLedger, SensitiveData, laplace_sample, make_rng
from .query import Workload, parity_workload


@dataclass
class BaselineConfig:
    max_order: int
    epsilon: float
    replay_passes: int = 100
    measurement_clamp: bool = True

    def __post_init__(self):
        if self.max_order < 1:
            raise ConfigError("max_order must be >= 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.replay_passes < 0:
            raise ConfigError("replay_passes must be >= 0")


class BaselineResult(NamedTuple):
    synthetic: Histogram
    history: History
    ledger: BudgetLedger


def run_baseline(dataset: Histogram, config: BaselineConfig, rng=None) -> BaselineResult:
    """All parity queries of order 1..k measured at scale |W|/eps, then replayed from uniform.

    ``replay_passes=0`` still applies one sweep, the single update per measurement.
    """
    universe = dataset.universe
    if config.max_order > len(universe.shape):
        raise ConfigError(f"max_order {config.max_order} exceeds {len(universe.shape)} attributes")
    rng = make_rng(rng)
    workload: Workload = parity_workload(universe, config.max_order)
    k = len(workload)
    n = dataset.mass
    ledger = BudgetLedger(config.epsilon)
    gate = SensitiveData(lambda: workload.evaluate(dataset), ledger, raw=dataset)
    eps_each = config.epsilon / k
    truth = np.empty(k)
    for j in range(k):
        with gate.charge(f"measure:{j}", eps_each):
            truth[j] = gate.answers()[j]
    m = truth + laplace_sample(1.0 / eps_each, rng, size=k)
    if config.measurement_clamp:
        m = np.clip(m, -n, n)
    start = uniform_histogram(universe, n, dataset.cap)
    approx = workload.evaluate(start)
    history = History()
    for j in range(k):
        history.append(HistoryEntry(j, float(m[j]), float(m[j] - approx[j]), j, j))
    passes = max(config.replay_passes, 1)
    return BaselineResult(mw_replay(start, workload, history, passes), history, ledger)
