"""Multi-patch magnetic particle imaging: simulation and reconstruction.

The package simulates scan data along rigidly transformed Lissajous
trajectories using the Langevin forward model and reconstructs the particle
distribution with a two-stage algorithm: a variational estimate of the
matrix-valued core operator followed by a non-negative fused-lasso
deconvolution of its trace.  A simulated system-matrix baseline is included
for comparison.
"""

from mpscan.errors import (
    DivergenceError,
    GridMismatchError,
    OutOfDomainError,
    UndefinedMetricError,
)
from mpscan.grid import DenseField, GridSpec

__version__ = "0.1.0"

__all__ = [
    "DenseField",
    "GridSpec",
    "DivergenceError",
    "GridMismatchError",
    "OutOfDomainError",
    "UndefinedMetricError",
    "__version__",
]
