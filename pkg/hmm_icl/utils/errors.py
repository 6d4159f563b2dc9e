class HmmIclError(Exception):
    """
    Base class for every error raised by the library.

    Sweeps catch this class per grid cell and record the message in-row, so
    anything that should abort a single cell (not the whole run) derives from it.
    """


class InvalidDimensionError(HmmIclError, ValueError):
    """A size argument is zero, negative, or inconsistent with another size."""


class InvalidDistributionError(HmmIclError, ValueError):
    """A matrix or vector that must be stochastic has negative entries or wrong sums."""


class DegenerateLikelihoodError(HmmIclError, ValueError):
    """
    Raised by the Bayes filter when an observation is impossible under the
    current belief.

    Attributes:
        normalizer (float): The likelihood mass that fell below the threshold.
        step (int | None): Position in the history where filtering failed.
    """

    def __init__(self, normalizer: float, step: int | None = None):
        self.normalizer = normalizer
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"Observation has likelihood {normalizer:.3e} under the belief{where}")


class DimensionMismatchError(HmmIclError, ValueError):
    """
    A demonstration or prefix has the wrong shape.

    Attributes:
        index (int | None): Offending demonstration index, None for the test prefix.
    """

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


class NonOneHotError(HmmIclError, ValueError):
    """A vector that must be one-hot is not."""


class ShapeError(HmmIclError, ValueError):
    """A matrix does not have the shape the operation requires."""


class EncoderContractError(HmmIclError, ValueError):
    """An encoder layer returned a block that does not fit its target columns."""


class CapacityError(HmmIclError, ValueError):
    """
    The residual stream is too narrow for the requested feature blocks.

    Attributes:
        needed (int): Number of columns the construction needs.
        available (int): Width D of the stack.
    """

    def __init__(self, needed: int, available: int, what: str = "feature map"):
        self.needed = needed
        self.available = available
        super().__init__(f"{what} needs {needed} columns but the stack width is {available}")


class SingularGramError(HmmIclError, ValueError):
    """
    The Gram matrix ZZ^T is not numerically invertible.

    Attributes:
        min_eigenvalue (float): Smallest eigenvalue of ZZ^T.
    """

    def __init__(self, min_eigenvalue: float, threshold: float):
        self.min_eigenvalue = min_eigenvalue
        self.threshold = threshold
        super().__init__(
            f"Gram matrix is singular: min eigenvalue {min_eigenvalue:.3e} <= {threshold:.3e}"
        )


class ConfigValidationError(HmmIclError, ValueError):
    """An experiment configuration failed validation."""


class DivergenceWarning(RuntimeWarning):
    """Gradient descent iterates grew past the divergence threshold."""
