"""Online tube MPC: cross-section geometry, gains, subproblem, loop."""

from .controller import (ClosedLoopLog, InitializationError, IterationResult,
                         RestorationError, SolverError, advance,
                         attach_gains, audit_relaxation, backtrack_restore,
                         find_initial_trajectory, mpc_iteration,
                         roll_trajectory, run_controller, update_trajectory)
from .gains import GainError, dp_gains, lqr_fixed_point
from .geometry import (TubeError, TubeParam, box_vertices, check_nonempty,
                       contains, disturbance_offsets, minkowski_vertices,
                       q_from_point, vertex_matrices, vertices, width)
from .subproblem import (BuildError, MpcConfig, NominalTrajectory,
                         Subproblem, build_subproblem,
                         concave_linearizations)

__all__ = [
    "TubeParam", "TubeError", "vertex_matrices", "vertices", "q_from_point",
    "contains", "width", "check_nonempty", "box_vertices",
    "minkowski_vertices", "disturbance_offsets",
    "GainError", "dp_gains", "lqr_fixed_point",
    "BuildError", "MpcConfig", "NominalTrajectory", "Subproblem",
    "build_subproblem", "concave_linearizations",
    "ClosedLoopLog", "InitializationError", "RestorationError",
    "SolverError", "IterationResult", "advance", "attach_gains",
    "audit_relaxation", "backtrack_restore", "find_initial_trajectory",
    "mpc_iteration", "roll_trajectory", "run_controller",
    "update_trajectory",
]
