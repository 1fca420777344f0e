"""Minimization of the penalized functional and the classical obstacle solvers.

solve_penalized runs projected gradient descent on the smoothed functional
with a decreasing schedule of ramp widths tau; steps are accepted only when
the exact (sharp-measure) penalized energy does not increase, so the recorded
energy history is monotone by construction.  solve_double_obstacle and
harmonic_extension are red-black projected SOR sweeps on arbitrary masked
regions; they back the initializer and the obstacle-extension construction
near the fixed boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from insulopt.domain import BoundObstacles, DomainMasks, DomainSpec, as_bound
from insulopt.energy import (
    PenaltyParams,
    ScalarField,
    descent_direction,
    dirichlet_energy,
    f_eps_slope,
    laplacian,
    penalized_energy,
    penalized_energy_smoothed,
    positivity_volume,
    smoothed_volume,
)

__all__ = [
    "ClearanceError",
    "SolveParams",
    "SolveResult",
    "ExtendedObstacles",
    "project_admissible",
    "solve_penalized",
    "solve_double_obstacle",
    "harmonic_extension",
    "obstacle_residual",
    "extend_obstacles",
    "prolong",
]


class ClearanceError(RuntimeError):
    """The current field is not positive on the requested collar around D."""


@dataclass(frozen=True)
class SolveParams:
    """Controls for the projected-descent solve.

    The default step starts at the diffusive stability limit h^2/4 and is
    halved by backtracking; the tau schedule defaults to sup(phi) * 2^-k for
    k = 3..12.  ``harmonic_target``, when set, keeps iterating the final
    stage until the interior Laplacian residual of the unclamped nodes drops
    below it (used by the regularity checks).
    """

    max_iters: int = 60000
    tol: float = 1e-11
    step0: float | None = None
    armijo: float = 1e-4
    step_rule: str = "backtracking"
    tau_schedule: tuple[float, ...] | None = None
    seed: int = 0
    init: str = "harmonic"
    min_step_factor: float = 2.0**-24
    harmonic_target: float | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.step_rule not in ("backtracking", "fixed"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.init not in ("harmonic", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.tau_schedule is not None:
            sched = tuple(self.tau_schedule)
            if any(t <= 0 for t in sched):
                raise ValueError("tau schedule must be positive")
            if any(b >= a for a, b in zip(sched, sched[1:])) and len(sched) > 1:
                raise ValueError("tau schedule must be strictly decreasing")


@dataclass
class SolveResult:
    """Converged field plus diagnostics.

    After the final projection the field satisfies phi <= u <= psi on D,
    0 <= u <= sup(phi) on Omega, and u = 0 on and outside the sphere of
    radius R.  ``history`` records (iteration, penalized energy, exterior
    volume) at every accepted step, where the energy is the stage objective
    (penalty applied to the ramp-smoothed measure at that stage's tau); it is
    non-increasing within each continuation stage.  ``stage_spans`` maps each
    tau to its slice of history rows.
    """

    u: ScalarField
    energy: float
    penalized_energy: float
    exterior_volume: float
    iterations: int
    converged: bool
    history: list[tuple[int, float, float]]
    sup_phi: float
    initial_dirichlet_energy: float
    min_value_seen: float
    max_value_seen: float
    stage_spans: list[tuple[float, int, int]] = field(default_factory=list)


def project_admissible(u: ScalarField, masks: DomainMasks, obstacles) -> ScalarField:
    """Clamp a field into the admissible set.

    D nodes go into [phi, psi], Omega nodes into [0, sup(phi)], and nodes on
    or outside the sphere of radius R are zeroed.  Idempotent; with constant
    bounds the clamp is 1-Lipschitz per node and never increases the
    Dirichlet energy.
    """
    bound = as_bound(obstacles, masks)
    v = u.values.copy()
    d = masks.inside_D
    v[d] = np.clip(v[d], bound.phi[d], bound.psi[d])
    om = masks.omega
    v[om] = np.clip(v[om], 0.0, bound.sup_phi)
    v[masks.outside] = 0.0
    return ScalarField(u.grid, v)


def _default_tau_schedule(sup_phi: float, warm: bool = False) -> tuple[float, ...]:
    # Warm starts are already sharp; the wide-ramp exploration stages would
    # diffuse them, so continuation restarts near the interface scale.
    start = 6 if warm else 3
    return tuple(sup_phi * 2.0**-k for k in range(start, 13))


def _initial_field(masks: DomainMasks, bound: BoundObstacles, sp: SolveParams) -> ScalarField:
    grid = masks.grid
    if sp.init == "random":
        rng = np.random.default_rng(sp.seed)
        v = rng.uniform(0.0, bound.sup_phi, size=grid.shape)
        v[masks.inside_D] = 0.5 * (bound.phi + bound.psi)[masks.inside_D]
        u = ScalarField(grid, v)
    else:
        # Harmonic bridge from phi on the boundary band down to zero on the
        # sphere, mirroring the positive comparison state used to start the
        # theory off; guarantees a positive collar around D.
        region = masks.omega & ~masks.boundary_band
        data = np.zeros(grid.shape)
        data[masks.boundary_band] = bound.phi[masks.boundary_band]
        ext = harmonic_extension(region, ScalarField(grid, data), grid=grid)
        v = ext.values.copy()
        v[masks.boundary_band] = bound.phi[masks.boundary_band]
        v[masks.inside_D] = bound.phi[masks.inside_D]
        u = ScalarField(grid, v)
    return project_admissible(u, masks, bound)


def _interior_residual(v: np.ndarray, masks: DomainMasks, bound: BoundObstacles,
                       p: PenaltyParams, grid) -> float:
    """Max |Delta_h u| over unclamped nodes away from the free boundary."""
    lap = laplacian(v, grid)
    pos = v > p.pos_threshold
    interior = np.zeros_like(pos)
    interior[1:-1, :] = pos[:-2, :] & pos[2:, :] & pos[1:-1, :]
    if grid.dim == 2:
        interior[:, 0] = False
        interior[:, -1] = False
        interior[:, 1:-1] &= pos[:, :-2] & pos[:, 2:]
    free_d = masks.inside_D & (v > bound.phi + 1e-12) & (v < bound.psi - 1e-12)
    sel = interior & (masks.omega | free_d)
    if not np.any(sel):
        return 0.0
    return float(np.max(np.abs(lap[sel])))


def solve_penalized(
    spec: DomainSpec,
    masks: DomainMasks,
    obstacles,
    p: PenaltyParams,
    sp: SolveParams | None = None,
    u0: ScalarField | None = None,
) -> SolveResult:
    """Projected descent with tau continuation for the penalized problem.

    Each stage fixes one ramp width tau and iterates
    ``u <- project_admissible(u + step * descent_direction(u))`` with
    backtracking, until the relative decrease of the stage objective (the
    penalized energy with the ramp-smoothed measure at that tau) falls below
    the tolerance.  The line search accepts only steps that decrease the
    stage objective, so the recorded energy history is non-increasing within
    every stage; the sharp-measure penalized energy is reported at the end.
    At exactly-zero exterior nodes the raw direction is corrected to the
    one-sided steepest descent: a node is lifted off zero only when the
    Laplacian pull exceeds the penalty ramp slope.  A warm start ``u0`` is
    projected before use.
    """
    if masks.spec is not spec and masks.spec != spec:
        raise ValueError("masks were rasterized for a different domain spec")
    if sp is None:
        sp = SolveParams()
    bound = as_bound(obstacles, masks)
    grid = masks.grid

    if u0 is not None:
        u = project_admissible(u0, masks, bound)
    else:
        u = _initial_field(masks, bound, sp)
    initial_dirichlet = dirichlet_energy(u)

    schedule = sp.tau_schedule or _default_tau_schedule(bound.sup_phi, warm=u0 is not None)
    step0 = sp.step0 if sp.step0 is not None else grid.h**2 / 4.0
    min_step = step0 * sp.min_step_factor

    history: list[tuple[int, float, float]] = []
    stage_spans: list[tuple[float, int, int]] = []
    min_seen = float(np.min(u.values))
    max_seen = float(np.max(u.values))
    iters = 0
    budget_exhausted = False

    for stage_idx, tau in enumerate(schedule):
        p_stage = p.with_tau(tau)
        final_stage = stage_idx == len(schedule) - 1
        stage_first_row = len(history)
        energy = penalized_energy_smoothed(u, masks, p_stage)
        step_memory = step0
        while True:
            if iters >= sp.max_iters:
                budget_exhausted = True
                break
            g = descent_direction(u, masks, p_stage)
            gv = g.values
            # one-sided steepest descent at the zero boundary: do not lift a
            # zero node unless the Laplacian pull beats the ramp slope
            slope = f_eps_slope(smoothed_volume(u, masks, p_stage), p_stage)
            sea = masks.omega & (u.values == 0.0)
            gv[sea & (gv <= slope / p_stage.tau)] = 0.0

            step = min(step0, 2.0 * step_memory) if sp.step_rule == "backtracking" else step0
            accepted = None
            while step >= min_step:
                trial = project_admissible(ScalarField(grid, u.values + step * gv), masks, bound)
                e_trial = penalized_energy_smoothed(trial, masks, p_stage)
                move = trial.values - u.values
                decrease_needed = sp.armijo / max(step, 1e-300) * grid.cell_volume * float(
                    np.sum(move * move)
                )
                if e_trial <= energy - decrease_needed:
                    accepted = (trial, e_trial, step)
                    break
                if sp.step_rule == "fixed":
                    break
                step *= 0.5
            iters += 1
            if accepted is None:
                # no acceptable step at line-search resolution: stagewise
                # stationarity
                break
            u, new_energy, step_memory = accepted
            history.append((iters, new_energy, positivity_volume(u, masks, p)))
            min_seen = min(min_seen, float(np.min(u.values)))
            max_seen = max(max_seen, float(np.max(u.values)))
            rel_drop = (energy - new_energy) / max(abs(energy), abs(new_energy), 1e-30)
            energy = new_energy
            if rel_drop < sp.tol:
                if final_stage and sp.harmonic_target is not None:
                    if _interior_residual(u.values, masks, bound, p, grid) > sp.harmonic_target:
                        continue
                break
        stage_spans.append((tau, stage_first_row, len(history)))
        if budget_exhausted:
            break

    return SolveResult(
        u=u,
        energy=dirichlet_energy(u),
        penalized_energy=penalized_energy(u, masks, p),
        exterior_volume=positivity_volume(u, masks, p),
        iterations=iters,
        converged=not budget_exhausted,
        history=history,
        sup_phi=bound.sup_phi,
        initial_dirichlet_energy=initial_dirichlet,
        min_value_seen=min_seen,
        max_value_seen=max_seen,
        stage_spans=stage_spans,
    )


# ---------------------------------------------------------------------------
# Relaxation solvers on masked regions
# ---------------------------------------------------------------------------


def _checkerboards(shape):
    idx = np.add.outer(np.arange(shape[0]), np.arange(shape[1]))
    red = idx % 2 == 0
    return red, ~red


def _connected_to_boundary(region: np.ndarray) -> np.ndarray:
    """Region nodes reachable from the region's complement-adjacent layer."""
    adjacent = np.zeros_like(region)
    comp = ~region
    adjacent[1:, :] |= comp[:-1, :]
    adjacent[:-1, :] |= comp[1:, :]
    adjacent[:, 1:] |= comp[:, :-1]
    adjacent[:, :-1] |= comp[:, 1:]
    frontier = region & adjacent
    reached = frontier.copy()
    while True:
        grow = np.zeros_like(reached)
        grow[1:, :] |= reached[:-1, :]
        grow[:-1, :] |= reached[1:, :]
        grow[:, 1:] |= reached[:, :-1]
        grow[:, :-1] |= reached[:, 1:]
        grow &= region & ~reached
        if not grow.any():
            return reached
        reached |= grow


def _relax(
    region: np.ndarray,
    values: np.ndarray,
    grid,
    lower: np.ndarray | None,
    upper: np.ndarray | None,
    tol: float,
    max_iters: int,
) -> tuple[np.ndarray, int, float]:
    """Red-black SOR on ``region`` with optional per-node clamping.

    ``values`` supplies the fixed data outside the region and the starting
    guess inside.  Stops when the largest Gauss-Seidel update falls below
    ``tol`` (absolute, in field units).
    """
    u = values.astype(float).copy()
    nb = 2 * grid.dim
    omega_sor = 2.0 / (1.0 + math.sin(math.pi / max(grid.nx, grid.ny)))
    omega_sor = min(omega_sor, 1.97)
    colors = _checkerboards(grid.shape) if grid.dim == 2 else (
        (np.arange(grid.nx)[:, None] % 2 == 0) & np.ones(grid.shape, bool),
        (np.arange(grid.nx)[:, None] % 2 == 1) & np.ones(grid.shape, bool),
    )
    masksets = [region & c for c in colors]
    for it in range(max_iters):
        biggest = 0.0
        for m in masksets:
            if not m.any():
                continue
            s = np.zeros(grid.shape)
            s[1:, :] += u[:-1, :]
            s[:-1, :] += u[1:, :]
            if grid.dim == 2:
                s[:, 1:] += u[:, :-1]
                s[:, :-1] += u[:, 1:]
            target = u + omega_sor * (s / nb - u)
            if lower is not None:
                target = np.maximum(target, lower)
            if upper is not None:
                target = np.minimum(target, upper)
            delta = target[m] - u[m]
            if delta.size:
                biggest = max(biggest, float(np.max(np.abs(delta))))
            u[m] = target[m]
        if biggest <= tol:
            return u, it + 1, biggest
    raise RuntimeError(f"relaxation did not reach tolerance {tol:g} in {max_iters} sweeps")


def solve_double_obstacle(
    region: np.ndarray,
    phi: np.ndarray,
    psi: np.ndarray,
    boundary_data: ScalarField,
    tol: float | None = None,
    max_iters: int = 200000,
) -> ScalarField:
    """Projected SOR for the double obstacle problem on a masked region.

    Minimizes the discrete Dirichlet energy over fields clamped into
    [phi, psi] on the region, with values fixed to ``boundary_data`` off the
    region.  The discrete functional is strictly convex on this box, so the
    relaxation converges to the unique minimizer.
    """
    grid = boundary_data.grid
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    phi_r = np.where(region, phi, -np.inf)
    psi_r = np.where(region, psi, np.inf)
    if np.any(phi_r > psi_r):
        bad = np.argwhere(phi_r > psi_r)[0]
        raise ValueError(f"infeasible obstacles: phi > psi at node {tuple(bad)}")
    scale = max(
        float(np.max(np.abs(boundary_data.values))),
        float(np.max(np.abs(phi[region & np.isfinite(phi)]), initial=0.0)),
        1e-12,
    )
    if tol is None:
        tol = 1e-13 * scale
    start = boundary_data.values.copy()
    finite_lo = np.where(np.isfinite(phi_r), phi_r, np.minimum(psi_r, 0.0))
    start[region] = np.clip(start[region], finite_lo[region], psi_r[region])
    u, _, _ = _relax(region, start, grid, phi_r, psi_r, tol, max_iters)
    return ScalarField(grid, u)


def obstacle_residual(u: ScalarField, region: np.ndarray, phi: np.ndarray, psi: np.ndarray,
                      slack: float = 1e-9) -> float:
    """Max |Delta_h u| over region nodes strictly between the obstacles."""
    lap = laplacian(u.values, u.grid)
    free = region & (u.values > phi + slack) & (u.values < psi - slack)
    if not np.any(free):
        return 0.0
    return float(np.max(np.abs(lap[free])))


def harmonic_extension(
    region: np.ndarray,
    boundary_data: ScalarField,
    grid=None,
    tol: float | None = None,
    max_iters: int = 200000,
) -> ScalarField:
    """Discrete-harmonic fill of ``region`` from the surrounding data.

    Satisfies the discrete maximum principle: the result stays between the
    extremes of the data on the region's neighbor layer.

    Raises
    ------
    ValueError
        If part of the region cannot be reached from its boundary.
    """
    if grid is None:
        grid = boundary_data.grid
    region = np.asarray(region, dtype=bool)
    if not region.any():
        return boundary_data.copy()
    reached = _connected_to_boundary(region)
    if not np.all(reached == region):
        bad = np.argwhere(region & ~reached)[0]
        raise ValueError(f"region node {tuple(bad)} is unreachable from the boundary data")
    scale = max(float(np.max(np.abs(boundary_data.values))), 1e-12)
    if tol is None:
        tol = 1e-11 * scale
    start = boundary_data.values.copy()
    u, _, _ = _relax(region, start, grid, None, None, tol, max_iters)
    return ScalarField(grid, u)


@dataclass(frozen=True)
class ExtendedObstacles:
    """Obstacles enlarged harmonically onto the collar D_delta \\ D."""

    phi: ScalarField
    psi: ScalarField
    d_delta: np.ndarray
    collar: np.ndarray


def extend_obstacles(
    spec: DomainSpec,
    masks: DomainMasks,
    obstacles,
    u_current: ScalarField,
    delta: float,
    threshold: float = 0.0,
) -> ExtendedObstacles:
    """Harmonic enlargement of both obstacles onto the collar around D.

    The extended lower obstacle keeps its values on D, matches the current
    field on the outer collar boundary, and is discrete-harmonic in between;
    same for the upper one.  Requires the current field to be positive on the
    whole collar (the free boundary must stay clear of D).
    """
    grid = masks.grid
    bound = as_bound(obstacles, masks)
    if delta <= 0:
        raise ValueError("delta must be positive")
    collar = masks.omega & (masks.dist_D > 0.0) & (masks.dist_D < delta)
    d_delta = masks.inside_D | collar
    r = np.hypot(*grid.coords()) if grid.dim == 2 else np.abs(grid.coords()[0])
    if np.any(collar & (r >= spec.R)):
        raise ValueError("collar D_delta must stay inside B_R")
    low = u_current.values[collar]
    if low.size and float(np.min(low)) <= threshold:
        flat = np.argwhere(collar & (u_current.values <= threshold))
        node = tuple(flat[0])
        raise ClearanceError(
            f"clearance violated: u = {u_current.values[node]:.3g} <= {threshold:.3g} "
            f"at collar node {node}"
        )

    X, Y = grid.coords()
    phi_data = u_current.values.copy()
    psi_data = u_current.values.copy()
    analytic_phi = np.asarray(bound.pair.phi(X, Y), dtype=float)
    analytic_psi = np.asarray(bound.pair.psi(X, Y), dtype=float)
    d_closure = masks.inside_D
    phi_data[d_closure] = analytic_phi[d_closure]
    psi_data[d_closure] = analytic_psi[d_closure]
    phi_ext = harmonic_extension(collar, ScalarField(grid, phi_data), grid=grid)
    psi_ext = harmonic_extension(collar, ScalarField(grid, psi_data), grid=grid)
    return ExtendedObstacles(phi=phi_ext, psi=psi_ext, d_delta=d_delta, collar=collar)


def prolong(u: ScalarField, fine_grid) -> ScalarField:
    """Bilinear interpolation of a field onto the nested refined grid."""
    coarse = u.values
    nxf, nyf = fine_grid.shape
    fine = np.zeros((nxf, nyf))
    xs = (fine_grid.origin[0] + fine_grid.h * np.arange(nxf) - u.grid.origin[0]) / u.grid.h
    ys = (fine_grid.origin[1] + fine_grid.h * np.arange(nyf) - u.grid.origin[1]) / u.grid.h
    i0 = np.clip(np.floor(xs).astype(int), 0, u.grid.nx - 2)
    j0 = np.clip(np.floor(ys).astype(int), 0, max(u.grid.ny - 2, 0))
    tx = np.clip(xs - i0, 0.0, 1.0)
    ty = np.clip(ys - j0, 0.0, 1.0)
    if u.grid.ny == 1:
        vals = coarse[i0, 0] * (1 - tx) + coarse[i0 + 1, 0] * tx
        fine[:, 0] = vals
        return ScalarField(fine_grid, fine)
    TX = tx[:, None]
    TY = ty[None, :]
    fine = (
        coarse[np.ix_(i0, j0)] * (1 - TX) * (1 - TY)
        + coarse[np.ix_(i0 + 1, j0)] * TX * (1 - TY)
        + coarse[np.ix_(i0, j0 + 1)] * (1 - TX) * TY
        + coarse[np.ix_(i0 + 1, j0 + 1)] * TX * TY
    )
    return ScalarField(fine_grid, fine)
