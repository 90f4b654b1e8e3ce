"""Privacy primitives: Laplace and exponential mechanisms, the budget ledger,
and the gate through which the sensitive dataset is read."""
from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import BudgetExhausted, ConfigError, DomainError, PrivacyError

LEDGER_SLACK = 1e-12


def make_rng(seed=None) -> np.random.Generator:
    """Seeded PCG64 stream; the same seed replays the same samples."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    T: int = 1
    delta: float = 0.0

    def __post_init__(self):
        if not 0 < self.epsilon < math.inf:
            raise ConfigError(f"epsilon must be positive and finite, got {self.epsilon}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not 0 <= self.delta < 1:
            raise ConfigError(f"delta must lie in [0, 1), got {self.delta}")


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    """Laplace(0, scale) as a random sign times scale * -log(U), U in (0, 1]."""
    if not scale > 0:
        raise DomainError(f"Laplace scale must be positive, got {scale}")
    u = 1.0 - rng.random(size)
    sign = np.where(rng.integers(0, 2, size) == 0, -1.0, 1.0)
    out = scale * np.log(u) * sign
    return float(out) if size is None else out


def stabilized_weights(scores, epsilon: float) -> np.ndarray:
    """``exp(eps * (s - max s) / 2)``; the shift leaves the distribution unchanged."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise DomainError("the exponential mechanism needs at least one candidate")
    if not np.all(np.isfinite(s)):
        raise DomainError("scores must be finite")
    e = epsilon * s / 2.0
    return np.exp(e - e.max())


def exponential_mechanism(scores, epsilon: float, rng: np.random.Generator) -> int:
    """Index i drawn with probability proportional to exp(epsilon * s_i / 2)."""
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    w = stabilized_weights(scores, epsilon)
    return int(kernels.scan_select(w, w.sum() * rng.random()))


def exponential_probabilities(scores, epsilon: float) -> np.ndarray:
    w = stabilized_weights(scores, epsilon)
    return w / w.sum()


@dataclass
class BudgetLedger:
    """Additive record of epsilon spent; charging past ``cap`` raises."""

    cap: float
    entries: list = field(default_factory=list)
    # Exact running sum, so the total is the correctly rounded sum of the charges.
    _exact: Fraction = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self._exact = sum((Fraction(e) for _, e in self.entries), Fraction(0))

    @property
    def total(self) -> float:
        return float(self._exact)

    @property
    def remaining(self) -> float:
        return max(self.cap - self.total, 0.0)

    def charge(self, label: str, epsilon: float) -> "BudgetLedger":
        if not epsilon > 0:
            raise DomainError(f"a charge must be positive, got {epsilon}")
        if self.total + epsilon > self.cap + LEDGER_SLACK:
            raise BudgetExhausted(
                f"charging {epsilon:g} for {label!r} exceeds the cap {self.cap:g} "
                f"(spent {self.total:g})"
            )
        self.entries.append((label, float(epsilon)))
        self._exact += Fraction(float(epsilon))
        return self

    def to_list(self):
        return [{"label": label, "epsilon": eps} for label, eps in self.entries]


def ledger_charge(ledger: BudgetLedger, label: str, epsilon: float) -> BudgetLedger:
    return ledger.charge(label, epsilon)


def eps_delta_recharacterize(epsilon: float, T: int, delta: float) -> float:
    """Effective epsilon of an epsilon-DP run of T rounds under (eps', delta) composition."""
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if T < 1:
        raise DomainError("T must be >= 1")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    return epsilon * math.sqrt(2.0 * math.log(1.0 / delta) / T) + epsilon * math.expm1(epsilon / T)


class SensitiveData:
    """Gate in front of the private dataset.

    ``answers`` and ``raw`` only work inside :meth:`charge`, which books the
    epsilon on the ledger and counts one touch.  :meth:`peek` is the
    diagnostics route: it works anywhere but marks the run non-private.
    """

    def __init__(self, evaluate, ledger: BudgetLedger, raw=None):
        self._evaluate = evaluate
        self._raw = raw
        self._cache = None
        self._open = 0
        self.ledger = ledger
        self.touches = 0
        self.nonprivate = False
        self.seconds = 0.0

    @contextmanager
    def charge(self, label: str, epsilon: float):
        self.ledger.charge(label, epsilon)
        self.touches += 1
        self._open += 1
        try:
            yield self
        finally:
            self._open -= 1

    def _guard(self):
        if not self._open:
            raise PrivacyError("sensitive data read outside a charged mechanism")

    def _answers(self) -> np.ndarray:
        if self._cache is None:
            t0 = time.perf_counter()
            self._cache = np.asarray(self._evaluate(), dtype=np.float64)
            self.seconds += time.perf_counter() - t0
        return self._cache

    def answers(self) -> np.ndarray:
        """True answers of every workload cell."""
        self._guard()
        return self._answers()

    def raw(self):
        """The underlying dataset (for mechanisms that need more than answers)."""
        self._guard()
        return self._raw

    def peek(self) -> np.ndarray:
        self.nonprivate = True
        return self._answers()

    def peek_raw(self):
        self.nonprivate = True
        return self._raw
