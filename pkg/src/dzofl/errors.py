"""Exception types raised by the simulator."""


class DZOFLError(Exception):
    """Base class for all simulator errors."""


class ConfigError(DZOFLError, ValueError):
    """Invalid run configuration or out-of-domain parameter."""


class TaskError(DZOFLError, RuntimeError):
    """A loss evaluation produced a non-finite value."""


class QuantizerRangeError(DZOFLError, ValueError):
    """Input to the quantizer is non-finite or above the representable range."""


class DomainError(DZOFLError, ValueError):
    """A closed-form bound was requested outside its domain of validity."""
