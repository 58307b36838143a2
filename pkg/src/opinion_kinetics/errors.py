"""Exception hierarchy shared by the library and the command line front end."""


class OpinionError(Exception):
    """Base class for all errors raised by this package."""


class MeasureError(OpinionError, ValueError):
    """Invalid measure data or a contract violation on measures."""


class EmptySliceError(MeasureError, KeyError):
    """Requested conviction value carries no mass."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "empty slice"


class NumericalError(OpinionError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy answer."""


class IntegrationError(NumericalError):
    def __init__(self, message: str, time: float | None = None, atom: int | None = None):
        super().__init__(message)
        self.time = time
        self.atom = atom


class SolverError(NumericalError):
    pass


class ConfigError(OpinionError, ValueError):
    pass
