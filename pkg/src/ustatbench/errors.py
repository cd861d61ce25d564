"""Semantic exception hierarchy shared by all bench modules."""


class BenchError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(BenchError, ValueError):
    """An argument violates an operation's contract (arity, sign, range)."""


class InputError(BenchError, ValueError):
    """Input data is malformed (non-finite values, wrong shape)."""


class UnsupportedOperationError(BenchError):
    """The operation is undefined for this object (e.g. no analytic projection)."""


class ResourceBudgetError(BenchError):
    """An enumeration would exceed the configured work budget."""


class DegenerateNormalizerError(BenchError):
    """A normalizer that must be positive came out zero (degenerate sample/law)."""


class EstimationError(BenchError):
    """A Monte Carlo or quadrature estimate is unusable (non-finite, no data)."""


class ConfigError(BenchError):
    """An experiment configuration is invalid or inconsistent."""


class ExperimentError(BenchError):
    """A run violated a hard experiment-level guarantee (e.g. too many flagged rows)."""
