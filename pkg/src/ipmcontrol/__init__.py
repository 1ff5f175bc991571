"""Interior point methods with saddle-point preconditioners for sparse
(L1-regularized) PDE-constrained optimal control on the unit square."""

from .fem import Grid, ObservationRegion
from .ipm import IpmParams, Solution, Stats, ipm_solve
from .qp import ControlProblem, QpProblem, build_qp, l1_norm, sparsity_metric
from .time_dependent import solve_heat_control

__version__ = "0.1.0"

__all__ = [
    "ControlProblem", "Grid", "IpmParams", "ObservationRegion", "QpProblem", "Solution",
    "Stats", "build_qp", "ipm_solve", "l1_norm", "solve_heat_control", "sparsity_metric",
]
