"""Exception types raised across the package."""


class TensorDictError(Exception):
    """Base class for all package errors."""


class ShapeError(TensorDictError, ValueError):
    """Operand dimensions are incompatible."""


class UnsupportedOrderError(TensorDictError, ValueError):
    """Requested tensor order is outside the supported range."""


class PreconditionError(TensorDictError, ValueError):
    """An input violates a documented precondition (e.g. unit norm)."""


class DegenerateInputError(TensorDictError, ValueError):
    """Input is degenerate (zero column, zero tensor, collapsed rank)."""


class InsufficientSamplesError(TensorDictError, ValueError):
    """Too few samples for the requested estimator."""


class DivergenceError(TensorDictError, RuntimeError):
    """An iterative method diverged.

    Parameters
    ----------
    iteration : int
        Iteration at which divergence was detected.
    """

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or "diverged at iteration %d" % iteration)


class DegenerateBlockError(TensorDictError, RuntimeError):
    """Every column of a filter block vanished during an update."""

    def __init__(self, block, iteration=None):
        self.block = block
        self.iteration = iteration
        msg = "all columns of block %d are zero" % block
        if iteration is not None:
            msg += " at iteration %d" % iteration
        super().__init__(msg)
