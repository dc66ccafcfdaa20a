"""MMD-regularized unbalanced optimal transport, barycenters and class-ratio estimation."""

from .barycenter import BarycenterProblem, BarycenterResult, barycenter_objective_and_gradient, solve_barycenter
from .class_ratio import ClassRatio, LabeledDataset, estimate_ratio_kl, estimate_ratio_mmd
from .discrepancy import kl_divergence, mmd_gradient_wrt_first, mmd_squared
from .errors import (
    ConfigError,
    DataError,
    IpmOtError,
    NumericalError,
)
from .exact import exact_ot_1d, exact_ot_enum
from .io import load_labeled_csv, load_points_csv
from .kernels import CostSpec, KernelSpec, cost_matrix, gram, median_heuristic
from .kl_uot import KlUotProblem, solve_kl_uot
from .measures import DiscreteMeasure, TransportPlan, marginals, uniform_measure
from .mmd_uot import SolveReport, UotProblem, barycentric_map, lifted_loss, objective_and_gradient, solve
from .optim import SolverConfig

__version__ = "0.1.0"

__all__ = [
    "BarycenterProblem",
    "BarycenterResult",
    "ClassRatio",
    "ConfigError",
    "CostSpec",
    "DataError",
    "DiscreteMeasure",
    "IpmOtError",
    "KernelSpec",
    "KlUotProblem",
    "LabeledDataset",
    "NumericalError",
    "SolveReport",
    "SolverConfig",
    "TransportPlan",
    "UotProblem",
    "barycenter_objective_and_gradient",
    "barycentric_map",
    "cost_matrix",
    "estimate_ratio_kl",
    "estimate_ratio_mmd",
    "exact_ot_1d",
    "exact_ot_enum",
    "gram",
    "kl_divergence",
    "lifted_loss",
    "load_labeled_csv",
    "load_points_csv",
    "marginals",
    "median_heuristic",
    "mmd_gradient_wrt_first",
    "mmd_squared",
    "objective_and_gradient",
    "solve",
    "solve_barycenter",
    "solve_kl_uot",
    "uniform_measure",
]
