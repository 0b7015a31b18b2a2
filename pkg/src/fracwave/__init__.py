"""fracwave: fractional-calculus toolkit.

Discrete Riemann-Liouville/Caputo operators and special functions
(:mod:`fracwave.fraccalc`), solvers for Caputo ODE systems with
component-wise orders (:mod:`fracwave.fode`), and a spectral solver with
energy monitors for the wave equation with acoustic boundary conditions
(:mod:`fracwave.galerkin`).  The :mod:`fracwave.cli` module drives
reproducible scenario runs from JSON configs.
"""

from fracwave.fraccalc import (
    FracOrder,
    MLParams,
    MittagLefflerError,
    SampledFunction,
    TimeGrid,
    caputo_derivative,
    caputo_square_inequality,
    check_identity_suite,
    gamma_fn,
    mittag_leffler,
    rl_integral,
)

__version__ = "0.1.0"

__all__ = [
    "TimeGrid",
    "FracOrder",
    "SampledFunction",
    "MLParams",
    "MittagLefflerError",
    "gamma_fn",
    "mittag_leffler",
    "rl_integral",
    "caputo_derivative",
    "check_identity_suite",
    "caputo_square_inequality",
    "__version__",
]
