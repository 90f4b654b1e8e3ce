"""Error and divergence measures between a synthetic and a true dataset."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Histogram
from .errors import DivergenceError, DomainError
from .query import Workload


def _answers(workload: Workload, hist):
    if isinstance(hist, Histogram):
        return workload.evaluate(hist)
    return np.asarray(hist, dtype=np.float64)


def _gaps(workload: Workload, A, B) -> np.ndarray:
    a, b = _answers(workload, A), _answers(workload, B)
    if a.shape != b.shape:
        raise DomainError("answer vectors differ in length")
    return np.abs(a - b)


def max_error(workload: Workload, A, B) -> float:
    """``max_q |q(A) - q(B)|``.  A and B are histograms or precomputed answer vectors."""
    return float(_gaps(workload, A, B).max())


def avg_squared_error(workload: Workload, A, B) -> float:
    g = _gaps(workload, A, B)
    return float(np.mean(g * g))


def relative_entropy(B: Histogram, A: Histogram, rtol: float = 1e-9) -> float:
    """``sum_x B(x) log(B(x)/A(x)) / n`` in nats, with 0 log 0 = 0."""
    b = np.asarray(B.weights if isinstance(B, Histogram) else B, dtype=np.float64)
    a = np.asarray(A.weights if isinstance(A, Histogram) else A, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError("histograms live on different domains")
    n, na = b.sum(), a.sum()
    if not n > 0 or not na > 0:
        raise DomainError("relative entropy needs positive masses")
    if abs(n - na) > rtol * max(n, na):
        raise DomainError(f"masses differ: {n} vs {na}")
    support = b > 0
    if np.any(a[support] <= 0):
        raise DivergenceError("A is zero where B has mass: relative entropy is infinite")
    bs = b[support]
    return float(np.sum(bs * np.log(bs / a[support])) / n)


@dataclass
class ErrorReport:
    """Per-query (or per-cuboid) absolute errors with their aggregates."""

    errors: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=np.float64)

    @property
    def max(self) -> float:
        return float(self.errors.max()) if self.errors.size else 0.0

    @property
    def mean(self) -> float:
        return float(self.errors.mean()) if self.errors.size else 0.0

    @property
    def mean_square(self) -> float:
        return float(np.mean(self.errors ** 2)) if self.errors.size else 0.0

    def summary(self) -> dict:
        return {"max": self.max, "mean": self.mean, "mean_square": self.mean_square}

    def to_dict(self) -> dict:
        out = self.summary()
        out["errors"] = self.errors.tolist()
        if self.labels:
            out["labels"] = list(self.labels)
        return out


def error_report(workload: Workload, A, B) -> ErrorReport:
    return ErrorReport(_gaps(workload, A, B))


def cuboid_errors(cuboids: list, A: Histogram, B: Histogram) -> ErrorReport:
    """Average absolute cell error of each cuboid; ``max`` and ``mean`` aggregate over cuboids."""
    errs, labels = [], []
    for g in cuboids:
        wl = Workload(g.cells)
        errs.append(float(_gaps(wl, A, B).mean()))
        labels.append("x".join(str(a) for a in g.attributes) or "()")
    return ErrorReport(np.array(errs), labels)


def nats_to_bits(value: float) -> float:
    return value / math.log(2.0)
