"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data ingestion problems with 3, numerical failures with 4.
"""


class LeadselError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(LeadselError, ValueError):
    """An argument or configuration value is invalid."""


class ConfigError(LeadselError):
    """A config file is missing, malformed, or violates an invariant."""


class IngestionError(LeadselError):
    """An input data file is malformed."""


class BoundaryError(LeadselError, ValueError):
    """A requested window falls outside the signal."""


class ContextError(LeadselError):
    """No usable context could be extracted from a segment."""


class TrainingError(LeadselError):
    """Classifier training diverged."""


class NumericalError(LeadselError):
    """A numerical operation produced a non-finite or unstable result."""
