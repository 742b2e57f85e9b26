"""Exception types shared across the package."""


class GPChoiceError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GPChoiceError):
    """A dataset, observation, or configuration failed validation."""


class EmptyChoiceSetError(ValidationError):
    """An observation has an empty chosen set."""


class DuplicateObjectError(ValidationError):
    """An observation references the same object twice."""


class IndexOutOfRangeError(ValidationError):
    """An observation references an object index outside the table."""


class SchemaError(ValidationError):
    """A JSON file does not match the expected schema."""


class ConfigError(ValidationError):
    """A run configuration contains unknown or invalid keys."""


class FactorizationError(GPChoiceError):
    """Cholesky factorization failed even at the maximum jitter."""


class NonFiniteError(GPChoiceError):
    """A non-finite value appeared in an objective or gradient."""


class InsufficientTailError(GPChoiceError):
    """Too few tail samples to fit a generalized Pareto distribution."""


class DegenerateWeightsError(GPChoiceError):
    """Importance weights are all equal; there is no tail to smooth."""


class TieDetectedError(GPChoiceError):
    """Two objects have exactly identical utility vectors."""


class DomainViolationError(GPChoiceError):
    """An input lies outside the domain of a test-suite function."""


class MajorityTieError(GPChoiceError):
    """Majority preference conversion hit an even split."""


class NoPositivesError(GPChoiceError):
    """A test set contains no truly chosen objects; TPR is undefined."""


class NoNegativesError(GPChoiceError):
    """A test set contains no truly rejected objects; TNR is undefined."""
