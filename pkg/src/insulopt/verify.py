"""Property checks: qualitative theory as pass/fail numerical assertions.

Each check compares a measured quantity against an explicit threshold and
returns a record naming the property verified; a PropertyReport aggregates
them.  The epsilon sweep re-solves the penalized problem along a decreasing
list of penalization parameters (warm-started) and detects the largest value
below which the prescribed exterior volume is met exactly up to tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from insulopt.domain import DomainMasks, DomainSpec, as_bound, build_grid, rasterize
from insulopt.energy import PenaltyParams, ScalarField, laplacian
from insulopt.freeboundary import estimate_lambda, extract_free_boundary, support_radius
from insulopt.solver import SolveParams, SolveResult, prolong, solve_penalized

__all__ = [
    "CheckRecord",
    "PropertyReport",
    "SweepRow",
    "SweepResult",
    "check_max_principle",
    "check_harmonicity",
    "check_volume_bound",
    "check_euler_lagrange",
    "check_lipschitz_refinement",
    "check_flat_boundary_exponent",
    "epsilon_sweep",
    "max_gradient",
    "fit_holder_exponent",
]


@dataclass
class CheckRecord:
    """Outcome of one property check."""

    name: str
    statement: str
    measured: dict
    threshold: dict
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean(
            {
                "name": self.name,
                "statement": self.statement,
                "measured": self.measured,
                "threshold": self.threshold,
                "passed": self.passed,
                "details": {k: v for k, v in self.details.items() if not k.startswith("_")},
            }
        )


@dataclass
class PropertyReport:
    """Aggregate of check records; reproducible given (config, seed)."""

    records: list[CheckRecord]

    @property
    def overall(self) -> bool:
        return all(r.passed for r in self.records)

    def to_dict(self) -> dict:
        return {"overall": self.overall, "checks": [r.to_dict() for r in self.records]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = []
        for r in self.records:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"[{status}] {r.name}: {r.statement}")
        lines.append(f"overall: {'PASS' if self.overall else 'FAIL'}")
        return "\n".join(lines)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# ---------------------------------------------------------------------------
# Pointwise bounds and harmonicity
# ---------------------------------------------------------------------------


def check_max_principle(result: SolveResult, tol_factor: float = 1e-8) -> CheckRecord:
    """0 <= u <= sup(phi), at every accepted iterate of the solve."""
    sup = result.sup_phi
    lo_ok = result.min_value_seen >= -tol_factor * sup
    hi_ok = result.max_value_seen <= sup * (1.0 + tol_factor)
    details = {}
    v = result.u.values
    if not (lo_ok and hi_ok):
        node = np.unravel_index(
            int(np.argmax(np.maximum(v - sup, -v))), v.shape
        )
        details["worst_node"] = [int(node[0]), int(node[1])]
        details["worst_value"] = float(v[node])
    return CheckRecord(
        name="max_principle",
        statement="solution stays within [0, sup phi] at every accepted iterate",
        measured={"min_seen": result.min_value_seen, "max_seen": result.max_value_seen},
        threshold={"lower": -tol_factor * sup, "upper": sup * (1.0 + tol_factor)},
        passed=bool(lo_ok and hi_ok),
        details=details,
    )


def _erode(mask: np.ndarray, dim: int) -> np.ndarray:
    out = mask.copy()
    out[0, :] = False
    out[-1, :] = False
    out[1:-1, :] &= mask[:-2, :] & mask[2:, :]
    if dim == 2:
        out[:, 0] = False
        out[:, -1] = False
        out[:, 1:-1] &= mask[:, :-2] & mask[:, 2:]
    return out


def check_harmonicity(
    result: SolveResult, masks: DomainMasks, tol_factor: float = 1e-4
) -> CheckRecord:
    """Harmonic on the positive phase, subharmonic everywhere in Omega.

    Residuals are measured as |h^2 Delta_h u| on positive-phase nodes at
    least two cells from the interface; subharmonicity requires
    h^2 Delta_h u >= -tol on every Omega node whose stencil stays in Omega.
    """
    u = result.u
    grid = u.grid
    tol = tol_factor * result.sup_phi
    lap2 = laplacian(u.values, grid) * grid.h**2

    omega_interior = _erode(masks.omega, grid.dim)
    pos = u.values > 0.0
    pos_core = _erode(_erode(pos, grid.dim), grid.dim)
    harmonic_nodes = omega_interior & pos_core
    harm_res = float(np.max(np.abs(lap2[harmonic_nodes]))) if np.any(harmonic_nodes) else 0.0
    sub_min = float(np.min(lap2[omega_interior])) if np.any(omega_interior) else 0.0
    passed = harm_res <= tol and sub_min >= -tol
    return CheckRecord(
        name="harmonicity",
        statement="discrete-harmonic on the positive phase, subharmonic in Omega",
        measured={"harmonic_residual": harm_res, "subharmonic_min": sub_min,
                  "n_harmonic_nodes": int(np.count_nonzero(harmonic_nodes))},
        threshold={"residual": tol, "subharmonic_floor": -tol},
        passed=bool(passed),
    )


def check_volume_bound(
    result: SolveResult, p: PenaltyParams, M_probe: float | None = None
) -> CheckRecord:
    """Exterior positive volume at most mu + M * eps.

    The default M is the Dirichlet energy of the initializer, mirroring the
    energy bound available from the positive comparison state.
    """
    M = M_probe if M_probe is not None else result.initial_dirichlet_energy
    limit = p.mu + M * p.eps
    passed = result.exterior_volume <= limit
    return CheckRecord(
        name="volume_bound",
        statement="positive-phase volume <= mu + M*eps",
        measured={"volume": result.exterior_volume, "M": M},
        threshold={"limit": limit},
        passed=bool(passed),
    )


# ---------------------------------------------------------------------------
# Euler-Lagrange identity on D
# ---------------------------------------------------------------------------


def check_euler_lagrange(
    result: SolveResult, obstacles, masks: DomainMasks, solver_tol: float = 0.0
) -> CheckRecord:
    """Laplacian of u matches the active obstacle's Laplacian classwise.

    D nodes are classified by coincidence (|u - obstacle| against a
    quadratic-separation tolerance); residuals are evaluated only on nodes
    whose full stencil stays inside the same class, since stencils straddling
    a coincidence boundary mix the two regimes.
    """
    bound = as_bound(obstacles, masks)
    u = result.u
    grid = u.grid
    h = grid.h
    d = masks.inside_D
    lap_norm = max(
        float(np.max(np.abs(bound.lap_phi[d]), initial=0.0)),
        float(np.max(np.abs(bound.lap_psi[d]), initial=0.0)),
    )
    tol_c = 10.0 * h * h * lap_norm + 1e-12 * bound.sup_phi

    touch = d & (np.abs(bound.phi - bound.psi) <= tol_c)
    on_phi = d & ~touch & (np.abs(u.values - bound.phi) <= tol_c)
    on_psi = d & ~touch & (np.abs(u.values - bound.psi) <= tol_c)
    free = d & ~touch & ~on_phi & ~on_psi

    lap = laplacian(u.values, grid)
    dim = grid.dim
    classes = {
        "coincidence_lower": (on_phi, lap - bound.lap_phi),
        "coincidence_upper": (on_psi, lap - bound.lap_psi),
        "contact": (touch, lap - bound.lap_psi),
        "free": (free, lap),
    }
    per_class = {}
    worst = 0.0
    for name, (mask, residual) in classes.items():
        core = _erode(mask & d, dim) & _erode(d, dim)
        if np.any(core):
            r = float(np.max(np.abs(residual[core])))
        else:
            r = 0.0
        per_class[name] = {"residual": r, "nodes": int(np.count_nonzero(core))}
        worst = max(worst, r)

    threshold = 10.0 * h * bound.c2_scale + solver_tol
    return CheckRecord(
        name="euler_lagrange",
        statement="Delta u equals the active obstacle Laplacian classwise on D",
        measured={"residual": worst, "per_class": per_class},
        threshold={"residual": threshold},
        passed=bool(worst <= threshold),
    )


# ---------------------------------------------------------------------------
# Regularity probes
# ---------------------------------------------------------------------------


def max_gradient(u: ScalarField) -> float:
    """Largest forward-difference slope over the whole grid."""
    v = u.values
    h = u.grid.h
    m = float(np.max(np.abs(np.diff(v, axis=0)))) if v.shape[0] > 1 else 0.0
    if u.grid.dim == 2:
        m = max(m, float(np.max(np.abs(np.diff(v, axis=1)))))
    return m / h


def check_lipschitz_refinement(
    spec: DomainSpec,
    obstacles,
    p: PenaltyParams,
    sp: SolveParams,
    resolutions: list[int],
    ratio_limit: float = 1.1,
) -> CheckRecord:
    """Max gradient must stabilize under grid refinement.

    Solves the penalized problem at each resolution (warm-started by bilinear
    prolongation) and passes when the ratio of the last two gradient maxima
    is at most ``ratio_limit``.  Attaches the solves in ``details`` for
    downstream inspection.
    """
    if len(resolutions) < 3:
        raise ValueError("need at least 3 resolutions")
    for a, b in zip(resolutions, resolutions[1:]):
        if (b - 5) % (a - 5) != 0:
            raise ValueError("each resolution must refine the previous one")
    grads = []
    solves = []
    u_prev = None
    for res in resolutions:
        grid = build_grid(spec, res)
        masks = rasterize(spec, grid)
        u0 = prolong(u_prev, grid) if u_prev is not None else None
        result = solve_penalized(spec, masks, obstacles, p, sp, u0=u0)
        grads.append(max_gradient(result.u))
        solves.append((result, masks))
        u_prev = result.u
    ratios = [b / a for a, b in zip(grads, grads[1:])]
    passed = ratios[-1] <= ratio_limit
    record = CheckRecord(
        name="lipschitz_refinement",
        statement="max discrete gradient stabilizes under refinement",
        measured={"max_gradients": grads, "ratios": ratios},
        threshold={"final_ratio": ratio_limit},
        passed=bool(passed),
    )
    record.details["_solves"] = solves
    return record


def fit_holder_exponent(residuals: np.ndarray, distances: np.ndarray,
                        floor: float) -> float:
    """Least-squares slope of log residual vs log distance.

    Residuals at or below the floor mean the gradient is numerically
    constant; if they all are, the fit saturates and +inf is returned.
    """
    keep = residuals > floor
    if np.count_nonzero(keep) < 3:
        return math.inf
    lr = np.log(residuals[keep])
    ld = np.log(distances[keep])
    slope = float(np.polyfit(ld, lr, 1)[0])
    return slope


def check_flat_boundary_exponent(
    result: SolveResult,
    masks: DomainMasks,
    face: str,
    window: float,
    alpha_floor: float = 0.4,
) -> CheckRecord:
    """One-sided Hoelder exponent of the gradient near a flat face of D.

    The reference gradient is taken at a grid node lying on the face (central
    differences, so a genuine gradient kink across the face shows up as a
    constant residual and a near-zero fitted exponent).  Each side is fitted
    separately over nodes along the inward/outward normal through the face
    center at distances 2h .. window.
    """
    spec = masks.spec
    if spec.shape != "rect":
        raise ValueError("flat-boundary probe needs a rectangular D")
    (x0, y0), (x1, y1) = spec.params["corners"]
    grid = result.u.grid
    h = grid.h
    xs, ys = grid.xs(), grid.ys()

    if face in ("left", "right"):
        plane = x0 if face == "left" else x1
        axis = 0
        center_t = 0.5 * (y0 + y1)
        half_span = 0.5 * (y1 - y0)
    elif face in ("bottom", "top"):
        plane = y0 if face == "bottom" else y1
        axis = 1
        center_t = 0.5 * (x0 + x1)
        half_span = 0.5 * (x1 - x0)
    else:
        raise ValueError(f"unknown face {face!r}")

    coords = xs if axis == 0 else ys
    i_face = int(np.argmin(np.abs(coords - plane)))
    if abs(coords[i_face] - plane) > 1e-9 * h:
        raise ValueError(f"face {face!r} at {plane} is not aligned with the grid")
    tang = ys if axis == 0 else xs
    j_c = int(np.argmin(np.abs(tang - center_t)))

    K = int(math.floor(window / h))
    if K < 8:
        raise ValueError(f"window of {K} nodes is too small (need >= 8)")
    if half_span < 4.0 * window:
        raise ValueError("window too large: corners must be at least 4 windows away")

    gx, gy = _central_gradients(result.u)

    def grad_at(i, j):
        return np.array([gx[i, j], gy[i, j]])

    def node(i_off):
        return (i_face + i_off, j_c) if axis == 0 else (j_c, i_face + i_off)

    outward = 1 if face in ("right", "top") else -1
    g0 = grad_at(*node(0))
    scale = max(float(np.max(np.hypot(gx, gy))), 1e-30)
    floor = 1e-9 * scale

    alphas = {}
    for side_name, sgn in (("outside", outward), ("inside", -outward)):
        ks = np.arange(2, K + 1)
        res = np.array([float(np.linalg.norm(grad_at(*node(int(sgn * k))) - g0)) for k in ks])
        alphas[side_name] = fit_holder_exponent(res, ks * h, floor)

    passed = all(a >= alpha_floor for a in alphas.values())
    return CheckRecord(
        name="flat_boundary_exponent",
        statement="one-sided gradient Hoelder exponent >= floor on both sides of the face",
        measured={"alpha": {k: (v if math.isfinite(v) else "saturated") for k, v in alphas.items()}},
        threshold={"alpha_floor": alpha_floor},
        passed=bool(passed),
        details={"face": face, "window_nodes": K},
    )


def _central_gradients(u: ScalarField):
    v = u.values
    h = u.grid.h
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[1:-1, :] = (v[2:, :] - v[:-2, :]) / (2 * h)
    if u.grid.dim == 2:
        gy[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * h)
    return gx, gy


# ---------------------------------------------------------------------------
# Epsilon sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    eps: float
    exterior_volume: float
    energy: float
    lambda_mean: float
    lambda_cv: float
    support_radius: float
    iterations: int
    converged: bool


@dataclass
class SweepResult:
    """Penalization sweep along strictly decreasing eps values.

    ``eps0`` is the largest listed eps such that every listed eps at or below
    it met the volume target within tolerance; None when even the smallest
    listed eps missed it.  ``aborted_at`` records a non-converged solve, in
    which case the rows collected so far are preserved.
    """

    rows: list[SweepRow]
    eps0: float | None
    vol_rtol: float
    aborted_at: float | None = None
    results: list[SolveResult] = field(default_factory=list)

    @property
    def lambda_spread(self) -> float:
        vals = [r.lambda_mean for r in self.rows if math.isfinite(r.lambda_mean) and r.lambda_mean > 0]
        if not vals:
            return math.nan
        return max(vals) / min(vals)

    def to_dict(self) -> dict:
        return _clean(
            {
                "eps0": self.eps0,
                "vol_rtol": self.vol_rtol,
                "aborted_at": self.aborted_at,
                "lambda_spread": self.lambda_spread,
                "rows": [asdict(r) for r in self.rows],
            }
        )


def epsilon_sweep(
    spec: DomainSpec,
    masks: DomainMasks,
    obstacles,
    eps_list: list[float],
    p: PenaltyParams,
    sp: SolveParams | None = None,
    vol_rtol: float = 0.01,
) -> SweepResult:
    """One converged solve per eps, warm-started from the previous field."""
    if not eps_list:
        raise ValueError("eps_list must not be empty")
    if any(not 0.0 < e < 1.0 for e in eps_list):
        raise ValueError("eps values must lie in (0, 1)")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")

    rows: list[SweepRow] = []
    results: list[SolveResult] = []
    aborted_at = None
    u_prev = None
    for eps in eps_list:
        p_eps = replace(p, eps=eps)
        result = solve_penalized(spec, masks, obstacles, p_eps, sp, u0=u_prev)
        if not result.converged:
            aborted_at = eps
            break
        fb = extract_free_boundary(result.u, masks, p_eps)
        if fb.n_chains > 0:
            lam = estimate_lambda(result.u, fb)
            lam_mean, lam_cv = lam.mean, lam.cv
        else:
            lam_mean, lam_cv = math.nan, math.nan
        rows.append(
            SweepRow(
                eps=eps,
                exterior_volume=result.exterior_volume,
                energy=result.energy,
                lambda_mean=lam_mean,
                lambda_cv=lam_cv,
                support_radius=support_radius(result.u, p_eps),
                iterations=result.iterations,
                converged=result.converged,
            )
        )
        results.append(result)
        u_prev = result.u

    eps0 = None
    ok_suffix = True
    for row in reversed(rows):
        if abs(row.exterior_volume - p.mu) > vol_rtol * p.mu:
            ok_suffix = False
        if ok_suffix:
            eps0 = row.eps
        else:
            break
    return SweepResult(rows=rows, eps0=eps0, vol_rtol=vol_rtol, aborted_at=aborted_at, results=results)
