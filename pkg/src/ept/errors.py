"""Exception types raised across the package."""


class EptError(Exception):
    """Base class for all library errors."""


class ShapeError(EptError, ValueError):
    pass


class ParameterError(EptError, ValueError):
    pass


class CapacityError(ShapeError):
    """A requested slice does not fit inside the meta subspace."""


class ContractError(EptError, ValueError):
    pass


class NumericError(EptError, ArithmeticError):
    pass


class DegenerateInputError(EptError, ValueError):
    pass


class IntegrityError(EptError):
    """Checkpoint payload does not match its recorded checksum."""


class ManifestError(EptError):
    pass


class TrainingError(EptError, RuntimeError):
    """Training aborted; carries the step number and parameter norms."""

    def __init__(self, message, step=None, norms=None):
        super().__init__(message)
        self.step = step
        self.norms = norms or {}
