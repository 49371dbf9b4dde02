"""Exception types shared across the package."""


class VolisegError(Exception):
    """Base class for all package-specific errors."""


class FormatError(VolisegError):
    """A file or payload does not conform to the expected on-disk format."""


class TruncationError(FormatError):
    """Raw payload byte count disagrees with the declared dimensions."""


class ParameterError(VolisegError, ValueError):
    """An argument value is outside its legal domain."""


class ValidationError(VolisegError, ValueError):
    """Inputs are structurally inconsistent (shape/length/bounds mismatch)."""


class CapacityError(VolisegError, RuntimeError):
    """Working memory is full and must be consolidated before adding."""


class StateError(VolisegError, RuntimeError):
    """An operation was invoked in a state that does not permit it."""


class NotFoundError(VolisegError, KeyError):
    """A referenced session or resource does not exist."""
