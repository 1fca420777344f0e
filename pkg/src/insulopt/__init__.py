"""Volume-constrained double-obstacle energy minimization on uniform grids.

The package minimizes the Dirichlet energy of a field that is pinned between
two obstacles inside a fixed domain D, vanishes far away, and whose positive
phase outside D must occupy a prescribed volume.  The volume constraint is
handled by a piecewise-linear penalty that is cheap below the target and
expensive above it, so the hard constraint is recovered for small values of
the penalization parameter.  A verification layer turns the qualitative
theory (maximum principle, harmonicity of the positive phase, volume
recovery, free-boundary gradient jump, boundary regularity) into pass/fail
numerical checks.
"""

from insulopt.domain import (
    DomainMasks,
    DomainSpec,
    Grid,
    ObstaclePair,
    build_grid,
    build_grid_from_spacing,
    domain_from_config,
    make_obstacles,
    rasterize,
)
from insulopt.energy import (
    PenaltyParams,
    ScalarField,
    descent_direction,
    dirichlet_energy,
    f_eps,
    penalized_energy,
    positivity_volume,
    smoothed_volume,
)
from insulopt.freeboundary import (
    FreeBoundary,
    clearance_check,
    density_scan,
    estimate_lambda,
    extract_free_boundary,
    nondegeneracy_scan,
    support_radius,
)
from insulopt.oracle import RadialSolution, brute_force_1d, radial_solution, slab_solution
from insulopt.solver import (
    ClearanceError,
    SolveParams,
    SolveResult,
    extend_obstacles,
    harmonic_extension,
    project_admissible,
    solve_double_obstacle,
    solve_penalized,
)
from insulopt.verify import (
    PropertyReport,
    SweepResult,
    check_euler_lagrange,
    check_flat_boundary_exponent,
    check_harmonicity,
    check_lipschitz_refinement,
    check_max_principle,
    check_volume_bound,
    epsilon_sweep,
)

__version__ = "0.1.0"
