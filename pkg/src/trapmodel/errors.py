"""Exception hierarchy shared by all modules."""


class TrapModelError(Exception):
    """Base class for package errors."""


class ParameterError(TrapModelError, ValueError):
    """A parameter lies outside the supported region."""


class UnsupportedDimensionError(ParameterError):
    pass


class RegionError(TrapModelError, IndexError):
    """A lattice site outside the environment's addressable region was queried."""


class HorizonError(TrapModelError, ValueError):
    """A path or trajectory was evaluated beyond the horizon it covers."""


class CapacityError(TrapModelError, MemoryError):
    """A deterministic method was asked for a problem larger than it accepts."""


class DivergenceError(TrapModelError, ValueError):
    """The requested quantity is infinite (e.g. the recurrent Green's function)."""


class PreconditionError(TrapModelError, ValueError):
    pass


class InputError(TrapModelError, ValueError):
    """Empty or malformed statistical input."""
