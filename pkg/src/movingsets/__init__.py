"""Constrained variational problems with moving constraint sets.

Finite element discretization of obstacle-type problems, solvers for
the resulting complementarity systems, perturbation and penalization
schemes, set-convergence studies, and implicit-obstacle fixed-point
iteration, plus a config-driven experiment CLI.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, MeshMismatchError,
                     MovingSetsError, PreconditionError, SolverError)
from .mesh import (Mesh, NodalVector, build_interval_mesh,
                   build_triangle_mesh, interpolate_nodal, mesh_size,
                   nodal, read_mesh_file, refine)
from .assembly import (DiscreteOperator, LoadFunctional, assemble_load,
                       assemble_mass, assemble_operator, energy_norm,
                       l2_norm, solve_linear, sup_norm)
from .constraints import (GradientBound, MidpointObstacle, NodalObstacle,
                          Unbounded, gradient_bound, is_feasible,
                          midpoint_obstacle, nodal_obstacle, project_mass,
                          unbounded, violation)
from .vi import (VISolution, complementarity_residual, energy_value,
                 solution_map, solve_vi)
from .regularization import (GalerkinMY, MoreauYosida, Tikhonov,
                             TikhonovMY, evaluate_perturbation,
                             gamma_study, minimize_perturbed,
                             no_recovery_demo)
from .mosco import (ContinuumProblem, SetSequence, fem_constraint_study,
                    gradient_sequence, midpoint_sequence, mosco_study,
                    obstacle_sequence, recovery_study)
from .qvi import (Compliant, Impulse, QVISolution, Superposition,
                  check_increasing, check_scaling_condition,
                  evaluate_obstacle, maximal_solution, minimal_solution,
                  qvi_fixed_point, stability_study)
from .report import StudyRecord, StudyReport, parse_csv

__all__ = [
    "__version__",
    # errors
    "MovingSetsError", "MeshMismatchError", "PreconditionError",
    "ConvergenceError", "SolverError", "ConfigError",
    # meshes
    "Mesh", "NodalVector", "nodal", "build_interval_mesh",
    "build_triangle_mesh", "refine", "mesh_size", "interpolate_nodal",
    "read_mesh_file",
    # assembly
    "DiscreteOperator", "LoadFunctional", "assemble_operator",
    "assemble_mass", "assemble_load", "solve_linear", "sup_norm",
    "l2_norm", "energy_norm",
    # constraint sets
    "Unbounded", "NodalObstacle", "MidpointObstacle", "GradientBound",
    "unbounded", "nodal_obstacle", "midpoint_obstacle", "gradient_bound",
    "is_feasible", "violation", "project_mass",
    # solvers
    "VISolution", "solve_vi", "solution_map", "energy_value",
    "complementarity_residual",
    # perturbation schemes
    "Tikhonov", "MoreauYosida", "TikhonovMY", "GalerkinMY",
    "evaluate_perturbation", "minimize_perturbed", "gamma_study",
    "no_recovery_demo",
    # set convergence
    "SetSequence", "obstacle_sequence", "midpoint_sequence",
    "gradient_sequence", "mosco_study", "recovery_study",
    "ContinuumProblem", "fem_constraint_study",
    # implicit obstacles
    "Superposition", "Compliant", "Impulse", "evaluate_obstacle",
    "check_increasing", "check_scaling_condition", "QVISolution",
    "qvi_fixed_point", "minimal_solution", "maximal_solution",
    "stability_study",
    # reporting
    "StudyRecord", "StudyReport", "parse_csv",
]
