"""Exception types shared across the package."""


class OutOfDomainError(ValueError):
    """A point or time falls outside the valid domain of an operation."""


class GridMismatchError(ValueError):
    """Two gridded objects that must share a grid do not."""


class DivergenceError(RuntimeError):
    """An iterative solver produced non-finite values."""


class UndefinedMetricError(ValueError):
    """A quality metric is undefined for the given inputs."""
