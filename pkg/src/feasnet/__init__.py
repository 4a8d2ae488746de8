"""Provably feasible neural surrogates for linearly constrained optimization.

The package trains small ReLU networks that map problem inputs to solutions
which are guaranteed, by mixed-integer verification, to satisfy every
inequality constraint of the underlying problem over an entire input polytope.
The workflow is: preprocess (criticality / equality elimination), calibrate
constraint limits, size and verify the network, then run adversarial-sample
aware training for optimality.  A DC optimal power flow adapter maps power
network cases onto the same machinery.
"""

from feasnet.config import INF, NumericConfig
from feasnet.problem import (
    BoxBounds,
    CalibratedLimits,
    InputDomain,
    LinearConstraintSet,
    OplcProblem,
    calibrate_limits,
    min_relative_redundancy,
    residuals,
)

__all__ = [
    "INF",
    "NumericConfig",
    "BoxBounds",
    "CalibratedLimits",
    "InputDomain",
    "LinearConstraintSet",
    "OplcProblem",
    "calibrate_limits",
    "min_relative_redundancy",
    "residuals",
]

__version__ = "0.1.0"
