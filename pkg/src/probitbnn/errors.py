"""Exception hierarchy.

Every error carries a short machine-readable ``category`` so the CLI can
report it on stderr and pick an exit code.
"""


class ProbitBNNError(Exception):
    category = "error"


class ConfigurationError(ProbitBNNError, ValueError):
    """Inconsistent shapes, out-of-range parameters, bad indices."""

    category = "configuration"


class NumericalError(ProbitBNNError, ArithmeticError):
    """A matrix could not be factorized even after jitter escalation."""

    category = "numerical"

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class CalibrationError(ProbitBNNError):
    category = "calibration"

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CheckpointError(ProbitBNNError):
    category = "checkpoint"
