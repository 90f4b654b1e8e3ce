"""The MWEM loop: exponential-mechanism selection, Laplace measurement and
multiplicative-weights correction, with its practical variations.

One driver (:class:`_Run`) serves both engines.  It talks to a *model* of
the approximating dataset through four methods: ``answers()`` (q(A) for
every workload cell), ``update(cell, m)``, ``replay(cells, targets,
passes)`` and ``snapshot()``.  :class:`ExplicitModel` keeps the weights
over the whole domain; :class:`mwem.factored.FactoredModel` keeps a
product of per-part tables.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .domain import Histogram, Universe
from .errors import ConfigError, DomainError
from .mech import (
    BudgetLedger,
    SensitiveData,
    laplace_sample,
    make_rng,
    stabilized_weights,
)
from .metrics import relative_entropy
from .query import CuboidGroup, LinearQuery, Workload

#: Failed rejection draws tolerated before sampling directly among unmeasured candidates.
REJECTION_LIMIT = 1000


@dataclass
class MwemConfig:
    T: int
    epsilon: float
    output_mode: str = "last"            # "last" or "average"
    replay_passes: int = 100
    histogram_init_fraction: float = 0.0
    adaptive_T: bool = False
    measurement_clamp: bool = True
    diagnostics: bool = False
    adaptive_stages: int = 3
    init_floor: float = 0.01             # floor for noisy init, as a fraction of n/|D|
    mass_fraction: float = 0.0           # budget share for a private estimate of n

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not 0 < self.epsilon < math.inf:
            raise ConfigError(f"epsilon must be positive and finite, got {self.epsilon}")
        if self.output_mode not in ("last", "average"):
            raise ConfigError(f"output_mode must be 'last' or 'average', got {self.output_mode!r}")
        if self.replay_passes < 0:
            raise ConfigError("replay_passes must be >= 0")
        if not 0 <= self.histogram_init_fraction < 1:
            raise ConfigError("histogram_init_fraction must lie in [0, 1)")
        if not 0 <= self.mass_fraction < 1 or self.histogram_init_fraction + self.mass_fraction >= 1:
            raise ConfigError("mass_fraction must lie in [0, 1) and leave budget for the rounds")
        if self.adaptive_stages < 1:
            raise ConfigError("adaptive_stages must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class HistoryEntry:
    query: int          # index of the measured cell in the workload
    measurement: float  # m_i as used by the update (after clamping)
    scale: float        # l_i = m_i - q_i(A_{i-1})
    round: int
    candidate: int


@dataclass
class History:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def append(self, entry: HistoryEntry):
        self.entries.append(entry)

    @property
    def queries(self) -> list:
        return [e.query for e in self.entries]

    @property
    def measurements(self) -> np.ndarray:
        return np.array([e.measurement for e in self.entries])

    @property
    def scales(self) -> np.ndarray:
        return np.array([e.scale for e in self.entries])

    def to_list(self):
        return [asdict(e) for e in self.entries]


@dataclass
class RoundTrace:
    index: int
    selected: int
    measurements: np.ndarray
    proxy: float                      # max |q(A_{i-1}) - m| over measured cells; private
    true_score: float = math.nan      # diagnostics only from here on
    approx_before: np.ndarray = None
    true_answers: np.ndarray = None
    potential: float = math.nan
    max_error: float = math.nan

    PRIVATE = ("index", "selected", "measurements", "proxy")

    @property
    def measurement(self) -> float:
        return float(self.measurements[0])

    def to_dict(self, diagnostics: bool):
        out = {}
        for k, v in asdict(self).items():
            if not diagnostics and k not in self.PRIVATE:
                continue
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass
class IterationTrace:
    rounds: list = field(default_factory=list)
    initial_potential: float = math.nan
    touches: int = 0
    nonprivate: bool = False
    seconds_total: float = 0.0
    seconds_sensitive: float = 0.0
    stages: list = field(default_factory=list)
    peak_entries: int = 0
    parts: int = 0

    def __len__(self):
        return len(self.rounds)

    def __iter__(self):
        return iter(self.rounds)

    @property
    def seconds_mw(self) -> float:
        """Wall time outside of sensitive-data evaluation."""
        return self.seconds_total - self.seconds_sensitive

    @property
    def potentials(self) -> np.ndarray:
        return np.array([self.initial_potential] + [r.potential for r in self.rounds])

    @property
    def max_errors(self) -> np.ndarray:
        return np.array([r.max_error for r in self.rounds])

    def to_dict(self):
        diag = self.nonprivate
        out = {
            "rounds": [r.to_dict(diag) for r in self.rounds],
            "touches": self.touches,
            "nonprivate": self.nonprivate,
            "seconds_total": self.seconds_total,
            "seconds_sensitive": self.seconds_sensitive,
            "stages": self.stages,
            "peak_entries": self.peak_entries,
            "parts": self.parts,
        }
        if diag:
            out["initial_potential"] = self.initial_potential
        return out


class MwemResult(tuple):
    """``(synthetic, history, trace, ledger)``; also reachable by attribute."""

    def __new__(cls, synthetic, history, trace, ledger):
        return super().__new__(cls, (synthetic, history, trace, ledger))

    synthetic = property(lambda self: self[0])
    history = property(lambda self: self[1])
    trace = property(lambda self: self[2])
    ledger = property(lambda self: self[3])


# ---------------------------------------------------------------- candidates

class Candidates:
    """Selectable units over a flat list of workload cells.

    A plain workload has one candidate per query.  A cuboid workload has one
    candidate per cuboid, scored by its summed cell error minus its cell count.
    """

    def __init__(self, cells: list, ptr=None, penalty=None):
        self.cells = list(cells)
        n = len(self.cells)
        self.ptr = np.arange(n + 1) if ptr is None else np.asarray(ptr, dtype=np.int64)
        self.penalty = np.zeros(len(self.ptr) - 1) if penalty is None else np.asarray(penalty, float)
        self.trivial = ptr is None and penalty is None

    @classmethod
    def from_workload(cls, workload: Workload):
        return cls(workload.queries)

    @classmethod
    def from_cuboids(cls, cuboids: list):
        cells, ptr = [], [0]
        for g in cuboids:
            cells.extend(g.cells)
            ptr.append(len(cells))
        return cls(cells, ptr, [len(g) for g in cuboids])

    def __len__(self):
        return len(self.ptr) - 1

    def members(self, c: int) -> np.ndarray:
        return np.arange(self.ptr[c], self.ptr[c + 1])

    def scores(self, approx: np.ndarray, truth: np.ndarray) -> np.ndarray:
        err = np.abs(approx - truth)
        if self.trivial:
            return err
        return np.add.reduceat(err, self.ptr[:-1]) - self.penalty

    def workload(self, label="") -> Workload:
        return Workload(self.cells, label)


def _select(scores, measured: set, epsilon: float, rng) -> int:
    """Exponential mechanism over all candidates, redrawn until an unmeasured one appears."""
    n = len(scores)
    if len(measured) >= n:
        raise ConfigError("every candidate has already been measured")
    w = stabilized_weights(scores, epsilon)
    total = w.sum()
    for _ in range(REJECTION_LIMIT):
        c = int(kernels.scan_select(w, total * rng.random()))
        if c not in measured:
            return c
    # Same conditional distribution, drawn directly.
    free = np.array(sorted(set(range(n)) - measured))
    w = stabilized_weights(np.asarray(scores)[free], epsilon)
    return int(free[kernels.scan_select(w, w.sum() * rng.random())])


# ---------------------------------------------------------------- explicit model

class ExplicitModel:
    """Approximation held as an explicit weight vector over the domain."""

    def __init__(self, universe: Universe, cells: list, weights: np.ndarray, mass: float):
        self.universe = universe
        self.matrix = Workload(cells).matrix(universe)
        self.w = np.array(weights, dtype=np.float64)
        self.mass = float(mass)

    def answers(self) -> np.ndarray:
        return self.matrix @ self.w

    def absorb(self, cells):
        pass

    def update(self, cell: int, m: float) -> float:
        v = self.matrix[cell]
        q = float(v @ self.w)
        kernels.mw_scale(self.w, v, (m - q) / (2.0 * self.mass), self.mass)
        return m - q

    def replay(self, cells, targets, passes: int):
        _replay_explicit(self.w, self.matrix[np.asarray(cells, dtype=np.int64)], targets,
                         passes, self.mass)

    def snapshot(self) -> np.ndarray:
        return self.w.copy()

    def histogram(self, weights=None) -> Histogram:
        return Histogram(self.universe, self.w.copy() if weights is None else weights)

    def potential(self, truth: Histogram) -> float:
        return relative_entropy(truth, self.histogram())


def _replay_explicit(w, rows, targets, passes, mass):
    h, size = rows.shape
    if h == 0 or passes == 0:
        return
    kernels.replay_parts(
        w,
        np.zeros(1, dtype=np.int64),
        np.array([size], dtype=np.int64),
        np.array([0, h], dtype=np.int64),
        np.arange(h, dtype=np.int64) * size,
        np.ascontiguousarray(rows).reshape(-1),
        np.asarray(targets, dtype=np.float64),
        int(passes),
        float(mass),
    )


# ---------------------------------------------------------------- public single steps

def mw_update(approx: Histogram, query: LinearQuery, target: float) -> Histogram:
    """One multiplicative-weights step toward ``target``; mass is preserved."""
    n = approx.mass
    if not n > 0:
        raise DomainError("mw_update needs a histogram of positive mass")
    w = approx.weights.copy()
    v = query.values(approx.universe)
    kernels.mw_scale(w, v, (target - float(v @ w)) / (2.0 * n), n)
    return Histogram(approx.universe, w, approx.cap)


def mw_replay(approx: Histogram, workload: Workload, history, passes: int) -> Histogram:
    """``passes`` sweeps of multiplicative weights over the recorded measurements."""
    if passes < 0:
        raise DomainError("passes must be >= 0")
    w = approx.weights.copy()
    entries = list(history)
    if entries and passes:
        rows = workload.matrix(approx.universe)[[e.query for e in entries]]
        _replay_explicit(w, rows, [e.measurement for e in entries], passes, approx.mass)
    return Histogram(approx.universe, w, approx.cap)


def select_query(dataset: Histogram, approx: Histogram, workload: Workload, measured,
                 eps_round: float, rng) -> int:
    """Exponential-mechanism choice of an unmeasured query, scored by |q(A) - q(B)|.

    Reads ``dataset`` directly: the caller owns the budget charge.
    """
    scores = np.abs(workload.evaluate(approx) - workload.evaluate(dataset))
    return _select(scores, set(measured), eps_round, make_rng(rng))


def _noisy_init(weights: np.ndarray, epsilon: float, rng, floor: float, mass: float) -> np.ndarray:
    noisy = weights + laplace_sample(1.0 / epsilon, rng, size=weights.shape[0])
    noisy = np.maximum(noisy, floor)
    return noisy * (mass / noisy.sum())


def histogram_init(dataset: Histogram, init_epsilon: float, rng, ledger: BudgetLedger = None,
                   floor: float | None = None) -> Histogram:
    """Noisy counts of every domain element, floored and renormalized to mass n."""
    if not init_epsilon > 0:
        raise DomainError("init_epsilon must be positive")
    ledger = BudgetLedger(init_epsilon) if ledger is None else ledger
    ledger.charge("histogram-init", init_epsilon)
    n = dataset.mass
    floor = 0.01 * n / dataset.universe.size if floor is None else floor
    w = _noisy_init(dataset.weights, init_epsilon, make_rng(rng), floor, n)
    return Histogram(dataset.universe, w, dataset.cap)


def utility_bound(n: float, domain_size: float, workload_size: float, T: int, epsilon: float) -> float:
    """Worst-case max error of the averaged output: 2n sqrt(ln|D|/T) + 10 T ln|Q| / eps."""
    for name, v in (("n", n), ("domain_size", domain_size), ("workload_size", workload_size),
                    ("T", T), ("epsilon", epsilon)):
        if not v > 0:
            raise DomainError(f"{name} must be positive")
    return (2.0 * n * math.sqrt(math.log(domain_size) / T)
            + 10.0 * T * math.log(workload_size) / epsilon)


def optimal_T(n, domain_size, workload_size, epsilon) -> int:
    """Integer T minimizing :func:`utility_bound`."""
    a = 2.0 * n * math.sqrt(math.log(domain_size))
    b = 10.0 * math.log(workload_size) / epsilon
    t = (a / (2.0 * b)) ** (2.0 / 3.0) if b > 0 else 1.0
    cands = {max(1, math.floor(t)), max(1, math.ceil(t))}
    return min(cands, key=lambda T: utility_bound(n, domain_size, workload_size, T, epsilon))


# ---------------------------------------------------------------- the driver

class _Run:
    """State of one MWEM pass over a model (one adaptive stage, or a whole run)."""

    def __init__(self, model, gate: SensitiveData, cands: Candidates, config: MwemConfig,
                 rng, mass: float, eps_round: float, truth_hist=None):
        self.model = model
        self.gate = gate
        self.cands = cands
        self.config = config
        self.rng = rng
        self.mass = mass
        self.eps_round = eps_round
        self.noise = 1.0 / eps_round
        self.truth_hist = truth_hist
        self.history = History()
        self.trace = IterationTrace()
        self.measured: set = set()
        self.round_index = 0
        self.lo = np.array([0.0 if getattr(c, "counting", False) else -mass for c in cands.cells])
        self.avg = model.snapshot() if config.output_mode == "average" else None
        self.avg_count = 1
        if config.diagnostics:
            self.trace.initial_potential = self._potential()

    def _potential(self):
        if self.truth_hist is None or not hasattr(self.model, "potential"):
            return math.nan
        self.gate.nonprivate = True
        return self.model.potential(self.truth_hist)

    def step(self) -> RoundTrace:
        i = self.round_index
        cfg = self.config
        approx = self.model.answers()
        with self.gate.charge(f"select:{i}", self.eps_round):
            scores = self.cands.scores(approx, self.gate.answers())
            c = _select(scores, self.measured, self.eps_round, self.rng)
        self.measured.add(c)
        cells = self.cands.members(c)
        with self.gate.charge(f"measure:{i}", self.eps_round):
            m = self.gate.answers()[cells] + laplace_sample(self.noise, self.rng, size=len(cells))
        if cfg.measurement_clamp:
            m = np.clip(m, self.lo[cells], self.mass)
        proxy = float(np.max(np.abs(approx[cells] - m)))
        self.model.absorb(cells)

        if cfg.replay_passes == 0:
            scales = [self.model.update(int(k), float(mk)) for k, mk in zip(cells, m)]
        else:
            scales = m - approx[cells]
        for k, mk, lk in zip(cells, m, scales):
            self.history.append(HistoryEntry(int(k), float(mk), float(lk), i, c))
        if cfg.replay_passes > 0:
            self.model.replay(self.history.queries, self.history.measurements, cfg.replay_passes)

        rt = RoundTrace(i, c, m, proxy)
        if cfg.diagnostics:
            truth = self.gate.peek()
            rt.true_score = float(scores[c])
            rt.approx_before = approx[cells]
            rt.true_answers = truth[cells]
            rt.potential = self._potential()
            rt.max_error = float(np.max(np.abs(self.model.answers() - truth)))
        self.trace.rounds.append(rt)
        self.round_index += 1
        if self.avg is not None and self.round_index < cfg.T:
            self.avg += self.model.snapshot()
            self.avg_count += 1
        return rt

    def output_weights(self):
        if self.avg is not None:
            return self.avg / self.avg_count
        return None


def _check_run(config: MwemConfig, n_candidates: int, mass: float):
    if config.T > n_candidates:
        raise ConfigError(f"T = {config.T} exceeds the {n_candidates} selectable candidates")
    if not mass > 0:
        raise ConfigError("the dataset must have positive mass")


@dataclass
class _Setup:
    """What every engine needs before the first round."""

    ledger: BudgetLedger
    gate: SensitiveData
    mass: float
    t0: float


def _begin(config: MwemConfig, cands: Candidates, evaluate, raw, true_mass: float, rng) -> _Setup:
    """Ledger and gate; spends the mass share of the budget when configured."""
    t0 = time.perf_counter()
    _check_run(config, len(cands), true_mass)
    ledger = BudgetLedger(config.epsilon)
    gate = SensitiveData(evaluate, ledger, raw=raw)
    n = float(true_mass)
    if config.mass_fraction > 0:
        eps_n = config.mass_fraction * config.epsilon
        with gate.charge("mass", eps_n):
            n = max(1.0, true_mass + laplace_sample(1.0 / eps_n, rng))
    return _Setup(ledger, gate, n, t0)


def _finish(run: _Run, setup: _Setup, synthetic, stages=()):
    tr = run.trace
    tr.touches = setup.gate.touches
    tr.nonprivate = setup.gate.nonprivate
    tr.seconds_total = time.perf_counter() - setup.t0
    tr.seconds_sensitive = setup.gate.seconds
    tr.stages = list(stages)
    if hasattr(run.model, "peak_entries"):
        tr.peak_entries = run.model.peak_entries
        tr.parts = run.model.part_count
    return MwemResult(synthetic, run.history, tr, setup.ledger)


def _drive(make_model, setup: _Setup, cands: Candidates, config: MwemConfig, rng, truth_hist=None):
    """Fixed-T or adaptive rounds; returns (final run, stage log)."""
    if not config.adaptive_T:
        eps_round = setup.ledger.remaining / (2 * config.T)
        run = _Run(make_model(), setup.gate, cands, config, rng, setup.mass, eps_round, truth_hist)
        for _ in range(config.T):
            run.step()
        return run, []
    return _adaptive(make_model, setup, cands, config, rng, truth_hist)


def _adaptive(make_model, setup: _Setup, cands, config: MwemConfig, rng, truth_hist):
    """Restart with doubled per-round epsilon while the signal outlasts the noise.

    Stage s spends ``eps0 * 2**s`` per mechanism call and runs at least as many
    rounds as stage s-1, so the total spend is at most twice the last stage's.
    A stage ends once two consecutive noisy errors fall below twice the Laplace
    scale (or at T rounds, or when the budget cannot pay another round).  The
    run ends when a stage sees no error above that level, or the budget cannot
    cover the next stage's minimum.
    """
    ledger = setup.ledger
    eps = ledger.remaining / (2 * config.T) / 2 ** (config.adaptive_stages - 1)
    min_rounds, best, log = 1, None, []
    for s in range(config.adaptive_stages):
        if ledger.remaining + 1e-12 < 2 * eps * min_rounds:
            break
        run = _Run(make_model(), setup.gate, cands, config, rng, setup.mass, eps, truth_hist)
        below, signal, stop = 0, False, "rounds"
        while run.round_index < config.T and len(run.measured) < len(cands):
            if ledger.remaining + 1e-12 < 2 * eps:
                stop = "budget"
                break
            rt = run.step()
            if rt.proxy < 2 * run.noise:
                below += 1
            else:
                below, signal = 0, True
            if below >= 2 and run.round_index >= min_rounds:
                stop = "noise"
                break
        log.append({"stage": s, "eps_round": eps, "rounds": run.round_index,
                    "spent": 2 * eps * run.round_index, "stop": stop, "signal": signal})
        best = run
        if not signal or stop == "budget":
            break
        min_rounds = run.round_index
        eps *= 2
    return best, log


def _run_explicit(dataset: Histogram, cands: Candidates, config: MwemConfig, rng):
    rng = make_rng(rng)
    universe = dataset.universe
    workload = cands.workload()
    setup = _begin(config, cands, lambda: workload.matrix(universe) @ dataset.weights,
                   dataset, dataset.mass, rng)
    n = setup.mass
    if config.histogram_init_fraction > 0:
        eps_init = config.histogram_init_fraction * config.epsilon
        with setup.gate.charge("histogram-init", eps_init):
            w0 = _noisy_init(setup.gate.raw().weights, eps_init, rng,
                             config.init_floor * n / universe.size, n)
    else:
        w0 = np.full(universe.size, n / universe.size)

    def make_model():
        return ExplicitModel(universe, cands.cells, w0, n)

    run, stages = _drive(make_model, setup, cands, config, rng, truth_hist=dataset)
    return _finish(run, setup, run.model.histogram(run.output_weights()), stages)


def run_mwem(dataset: Histogram, workload: Workload, config: MwemConfig, rng=None) -> MwemResult:
    """MWEM over an explicit histogram.  Returns (synthetic, history, trace, ledger)."""
    workload.check(dataset.schema)
    return _run_explicit(dataset, Candidates.from_workload(workload), config, rng)


def run_mwem_cuboids(dataset: Histogram, cuboids: list, config: MwemConfig, rng=None) -> MwemResult:
    """MWEM selecting whole cuboids; every cell of the chosen cuboid is measured."""
    if not cuboids or not all(isinstance(g, CuboidGroup) for g in cuboids):
        raise ConfigError("run_mwem_cuboids needs a non-empty list of CuboidGroup")
    return _run_explicit(dataset, Candidates.from_cuboids(cuboids), config, rng)


def adaptive_run(dataset: Histogram, workload: Workload, config: MwemConfig, rng=None) -> MwemResult:
    """:func:`run_mwem` with T chosen by doubling; ``config.T`` caps rounds per stage."""
    if not config.adaptive_T:
        raise ConfigError("adaptive_run needs config.adaptive_T set")
    return run_mwem(dataset, workload, config, rng)
