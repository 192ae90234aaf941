"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Input dimensions or structure are inconsistent with the operation."""


class ParameterError(ValueError):
    """A numeric argument is outside its valid domain."""


class StateError(RuntimeError):
    """Operation applied to an object in the wrong state."""


class KernelOverflowError(OverflowError):
    """An inner product is large enough that exp() would overflow float64."""


class EstimationError(RuntimeError):
    """A randomized estimator failed to meet its accuracy contract."""


class DegenerateNormalizerError(RuntimeError):
    """An estimated normalization factor came out nonpositive."""


class SampleExplosionError(RuntimeError):
    """A sampling level drew far more indices than its target size."""


class MatrixFileError(ValueError):
    """A matrix file failed validation; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
