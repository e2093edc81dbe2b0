"""Exception types shared across the codec."""


class SetFieldError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class InvalidArgument(SetFieldError, ValueError):
    pass


class EmptyProposalError(SetFieldError):
    """Importance sampling requested for a set with no objects."""


class UnsupportedOperation(SetFieldError):
    pass


class InsufficientPoints(SetFieldError, ValueError):
    pass


class InvalidField(SetFieldError, ValueError):
    pass


class OptimizationDiverged(SetFieldError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class SchemaError(SetFieldError, ValueError):
    """Malformed or version-mismatched document; message carries the field path."""
