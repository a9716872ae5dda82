"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A run configuration violates a structural requirement."""


class CFLViolationError(RuntimeError):
    """Advective CFL bound violated; carries the offending time and limit."""

    def __init__(self, message, t=None, dt=None, dt_limit=None):
        super().__init__(message)
        self.t = t
        self.dt = dt
        self.dt_limit = dt_limit


class BlowUpError(RuntimeError):
    """A trajectory left the representable range; carries the last good time."""

    def __init__(self, message, last_good_time=None, system=None):
        super().__init__(message)
        self.last_good_time = last_good_time
        self.system = system


class FitError(ValueError):
    """Not enough usable samples for a rate fit."""


class EnsembleError(RuntimeError):
    """Too many ensemble members were excluded."""
