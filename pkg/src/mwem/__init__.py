"""Differentially private synthetic data with MWEM."""
from .core import MwemConfig, MwemResult, adaptive_run, run_mwem, run_mwem_cuboids
from .domain import AttributeSchema, Histogram, RecordTable, Universe, histogram_from_records
from .errors import (
    BudgetExhausted,
    ConfigError,
    DivergenceError,
    DomainError,
    MwemError,
    PrivacyError,
    ResourceError,
)
from .factored import FactoredDistribution, run_mwem_factored
from .metrics import max_error, relative_entropy
from .query import CellQuery, CustomQuery, ParityQuery, RangeQuery, Workload

__version__ = "0.1.0"

__all__ = [
    "AttributeSchema", "BudgetExhausted", "CellQuery", "ConfigError", "CustomQuery",
    "DivergenceError", "DomainError", "FactoredDistribution", "Histogram", "MwemConfig",
    "MwemError", "MwemResult", "ParityQuery", "PrivacyError", "RangeQuery", "RecordTable",
    "ResourceError", "Universe", "Workload", "adaptive_run", "histogram_from_records",
    "max_error", "relative_entropy", "run_mwem", "run_mwem_cuboids", "run_mwem_factored",
]
