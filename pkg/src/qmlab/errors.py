"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class QmlabError(Exception):
    """Base class for all library errors."""


class DimensionError(QmlabError, ValueError):
    """Operands live in different ambient dimensions."""


class SymbolSyntaxError(QmlabError, ValueError):
    """A symbol string could not be parsed.

    ``position`` is the 0-based character offset of the offending token.
    """

    def __init__(self, message, text="", position=0):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.text = text
        self.position = position


class SingularTransformError(QmlabError, ValueError):
    """A coordinate change matrix is (numerically) singular."""


class PreconditionError(QmlabError):
    """A numerical precondition was violated (maps to CLI exit code 3)."""


class AliasingError(PreconditionError):
    """Grid function carries energy at the Nyquist frequency."""


class EllipticityError(PreconditionError):
    """Symbol is not bounded away from zero where it was sampled."""


class EmptyWindowError(PreconditionError):
    """A lattice window (annulus, cap) contains no points."""


class ReductionError(QmlabError):
    """A stage of the symbol reduction failed.

    ``stage`` is the coordinate index being processed (1-based) or None for
    the normalization step.
    """

    def __init__(self, message, stage=None, detail=None):
        super().__init__(message)
        self.stage = stage
        self.detail = detail or {}
