"""Exception hierarchy shared across the engine.

The CLI maps these onto process exit codes; everything else raises them.
"""


class AttribevalError(Exception):
    """Base class for all engine errors."""


class ConfigError(AttribevalError):
    """Bad run configuration (unknown method name, missing key, ...)."""


class ParseError(AttribevalError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(AttribevalError):
    """Structurally valid input violating a domain invariant."""


class DuplicateIdError(AttribevalError):
    """Two records claim the same instance id."""


class ContractViolation(AttribevalError):
    """An operation was called outside its documented precondition."""


class NumericError(AttribevalError):
    """Non-finite score or other numeric failure."""


class CapacityError(AttribevalError):
    """Input exceeds a documented size limit."""


class UnsupportedCapabilityError(AttribevalError):
    """Model does not declare the capability required by the operation."""


class ModelUnavailableError(AttribevalError):
    """Adapter transport failed (timeout, broken pipe, connection refused)."""


class ProtocolError(AttribevalError):
    """Adapter replied with a malformed or mismatched protocol message."""


class DegenerateInputError(AttribevalError):
    """Input is valid but carries no usable signal (all-zero scores, empty span set)."""


class EmptyEvaluationError(AttribevalError):
    """No instance survived the evaluator's filters."""


class TrainingError(AttribevalError):
    """Agent training diverged; carries the hyperparameters for the record."""
