"""Exception types.

Everything derives from :class:`DropoutUAError` so callers (and the CLI exit-code
mapping) can catch the library's own failures without swallowing bugs.
"""


class DropoutUAError(Exception):
    """Base class for all library errors."""


class ShapeError(DropoutUAError, ValueError):
    """Input, mask or parameter shapes do not match."""


class InvalidProbabilityError(DropoutUAError, ValueError):
    """A drop/keep probability is outside its admissible range."""


class PreconditionError(DropoutUAError, ValueError):
    """An operation's precondition does not hold (e.g. P[f = 1] = 0)."""


class UnsupportedModelError(DropoutUAError, ValueError):
    """The filter model cannot be enumerated for an exact computation."""


class InadmissibleActivationError(DropoutUAError, ValueError):
    """Activation cannot serve as zeroth layer (sigma(0) != 0 or sigma_- + sigma_+ == 0)."""


class StructuralError(DropoutUAError, ValueError):
    """Invalid dropout-tree operation (non-leaf target, level too low, non-full tree)."""


class FitDivergedError(DropoutUAError, RuntimeError):
    """Base-network fitting produced a non-finite loss."""


class BaseFitFailedError(DropoutUAError, RuntimeError):
    """Base-network fit did not reach the requested accuracy within budget."""


class BudgetExceededError(DropoutUAError, RuntimeError):
    """A doubling policy hit its cap before the requested guarantee was met."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class OverflowRadiusError(DropoutUAError, ArithmeticError):
    """Radii recursion produced a non-finite value."""
