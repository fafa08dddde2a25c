"""Exception hierarchy shared by every module of the package."""


class NVHMetaError(Exception):
    """Base class for all errors raised by nvhmeta."""


class SchemaError(NVHMetaError):
    """A CSV file or JSON document does not have the expected columns/keys."""


class ParseError(NVHMetaError):
    """A field could not be parsed, or parsed to a non-finite value."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SelectionError(NVHMetaError):
    """A categorical selector references an attribute unknown to the dataset."""


class DimensionError(NVHMetaError, ValueError):
    """Parameter blocks do not match the surrogate specification."""


class DomainError(NVHMetaError, ValueError):
    """An input lies outside the domain of a mean function or transform."""


class SpecError(NVHMetaError, ValueError):
    """An operation was called with a surrogate of the wrong family."""


class ConditioningError(NVHMetaError):
    """The least-squares problem is singular or numerically ill-conditioned."""

    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = condition_number


class PreconditionError(NVHMetaError, ValueError):
    """An operation precondition (e.g. more data than parameters) is violated."""


class PartitionError(NVHMetaError, ValueError):
    """A K-fold partition would leave a fold with fewer than two records."""


class DegenerateVarianceError(NVHMetaError, ValueError):
    """R-squared is undefined because the observed response is constant."""


class InitializationError(NVHMetaError):
    """A sampler chain could not start from a point with finite log-density."""

    def __init__(self, message, chain=None):
        super().__init__(message)
        self.chain = chain


class ConfigurationError(NVHMetaError, ValueError):
    """A model, prior or run configuration is incomplete or inconsistent."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ExtrapolationError(NVHMetaError, ValueError):
    """A prediction was requested for a frequency band the model never saw."""


class ComparisonError(NVHMetaError, ValueError):
    """LOO reports computed on different datasets cannot be ranked."""
