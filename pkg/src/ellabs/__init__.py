"""Goal-specific ellipsoidal abstractions for nonlinear discrete-time systems.

The package builds a finite graph of ellipsoidal cells backward from a target
set. Each edge carries an affine feedback law certified by a semidefinite
program to steer the whole source cell into its target cell under every
admissible disturbance, together with a worst-case stage-cost bound. The
resulting graph, its shortest-path value table and the induced concrete
controller solve reach-avoid tasks with a guaranteed total cost.
"""

__version__ = "0.1.0"

from .abstraction import (
    AbstractSpec,
    AbstractState,
    AbstractTransition,
    Abstraction,
    BuildParams,
    BuildResult,
    ControlProblem,
    ValueTable,
    build_abstraction,
    get_abs_specification,
    improve_abs,
    k_closest,
    sample_state,
    value_function,
)
from .dynamics import (
    AffineModel,
    Polynomial,
    PolynomialSystem,
    error_box,
    eval_system,
    linearize,
    lipschitz_bound,
    nominal_linearization_point,
)
from .geometry import (
    CenterBlocked,
    Ellipsoid,
    Hyperrectangle,
    InputSet,
    VPolytope,
    box_inner_ellipsoid,
    box_outer_ellipsoid,
    contains_point,
    ellipsoid_inclusion,
    ellipsoids_disjoint,
    max_sq_dist_to_point,
    point_to_ellipsoid_distance,
    shrink_to_avoid,
    volume,
)
from .problem import Problem, ProblemError, load_problem, parse_problem
from .runtime import (
    CertificationReport,
    ConcreteController,
    MaxSteps,
    NoisePolicy,
    OutsideDomain,
    Simulator,
    Trajectory,
    certify_trajectory,
)
from .synthesis import (
    ConicBackend,
    CvxpyBackend,
    Infeasible,
    LocalProblem,
    LocalSolution,
    NumericalFailure,
    StageCost,
    assemble_lmis,
    factor_stage_cost,
    new_transition,
    solve_local_problem,
)
