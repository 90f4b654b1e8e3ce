class MwemError(Exception):
    """Base class for errors raised by this package."""


class DomainError(MwemError, ValueError):
    """Input does not belong to the declared domain (bad tuple, attribute, value)."""


class ConfigError(MwemError, ValueError):
    """Inconsistent or unsatisfiable run configuration."""


class BudgetExhausted(MwemError):
    """A privacy charge would push the ledger above its cap."""


class ResourceError(MwemError):
    """An explicit table would exceed the configured size cap."""


class DivergenceError(MwemError, ValueError):
    """Relative entropy is infinite (approximation has zero weight where data has mass)."""


class PrivacyError(MwemError):
    """Sensitive data was read outside of a charged mechanism invocation."""
