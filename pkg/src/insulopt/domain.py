"""Grids, domain rasterization, and obstacle presets.

The geometry is deliberately simple: a uniform node-centered lattice covering
the ball B_R with a two-cell margin, an inner domain D given analytically
(disk, rectangle, or polygon), and the exterior annulus Omega_R = B_R \\ D.
Everything downstream (energies, solvers, free-boundary extraction) works on
per-node boolean masks produced here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Grid",
    "DomainSpec",
    "DomainMasks",
    "ObstaclePair",
    "BoundObstacles",
    "build_grid",
    "build_grid_from_spacing",
    "rasterize",
    "make_obstacles",
    "domain_from_config",
    "OBSTACLE_PRESETS",
]

# Node labels used by DomainMasks.labels.
INSIDE_D = 0
BAND = 1
OMEGA = 2
OUTSIDE = 3


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered lattice.

    Parameters
    ----------
    nx, ny : int
        Node counts.  ``ny == 1`` gives a 1D grid (used by the brute-force
        oracle); otherwise both counts must be at least 3.
    h : float
        Node spacing, identical in both directions.
    origin : tuple of float
        Physical coordinates of node (0, 0).
    """

    nx: int
    ny: int
    h: float
    origin: tuple[float, float]

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError(f"grid spacing must be positive, got {self.h}")
        if self.nx < 3:
            raise ValueError(f"nx must be >= 3, got {self.nx}")
        if self.ny != 1 and self.ny < 3:
            raise ValueError(f"ny must be >= 3 (or 1 for 1D), got {self.ny}")

    @property
    def dim(self) -> int:
        return 1 if self.ny == 1 else 2

    @property
    def cell_volume(self) -> float:
        """Volume element h^d."""
        return self.h**self.dim

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays X, Y of shape (nx, ny)."""
        return np.meshgrid(self.xs(), self.ys(), indexing="ij")


def _segment_distance(px, py, ax, ay, bx, by):
    """Distance from points (px, py) to segment (a, b), vectorized."""
    vx, vy = bx - ax, by - ay
    denom = vx * vx + vy * vy
    if denom == 0.0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * vx + (py - ay) * vy) / denom, 0.0, 1.0)
    return np.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _polygon_contains(vx, vy, X, Y):
    """Even-odd ray casting, vectorized over node arrays."""
    inside = np.zeros(X.shape, dtype=bool)
    n = len(vx)
    j = n - 1
    for i in range(n):
        crosses = (vy[i] > Y) != (vy[j] > Y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_int = vx[i] + (vx[j] - vx[i]) * (Y - vy[i]) / (vy[j] - vy[i])
        inside ^= crosses & (X < x_int)
        j = i
    return inside


@dataclass(frozen=True)
class DomainSpec:
    """Inner domain D, outer radius R, and target exterior volume mu.

    ``shape`` is one of ``"disk"`` (params: center, a), ``"rect"``
    (params: corners) or ``"polygon"`` (params: vertices).  The spec checks
    at construction that D lies strictly inside B_R and that the exterior
    B_R \\ D can hold the requested volume (in 2D; for 1D grids the discrete
    check in :func:`rasterize` applies).
    """

    shape: str
    params: dict
    R: float
    mu: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.R <= 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.shape == "disk":
            a = float(self.params["a"])
            cx, cy = self.params.get("center", (0.0, 0.0))
            if a <= 0:
                raise ValueError("disk radius must be positive")
            if math.hypot(cx, cy) + a >= self.R:
                raise ValueError("D must lie strictly inside B_R")
        elif self.shape == "rect":
            (x0, y0), (x1, y1) = self.params["corners"]
            if x1 <= x0 or y1 <= y0:
                raise ValueError("rectangle corners must be ordered and non-degenerate")
            far = max(math.hypot(x, y) for x in (x0, x1) for y in (y0, y1))
            if far >= self.R:
                raise ValueError("D must lie strictly inside B_R")
        elif self.shape == "polygon":
            verts = self.params["vertices"]
            if len(verts) < 3:
                raise ValueError("polygon needs at least 3 vertices")
            if max(math.hypot(x, y) for x, y in verts) >= self.R:
                raise ValueError("D must lie strictly inside B_R")
        else:
            raise ValueError(f"unknown shape {self.shape!r}")
        if math.pi * self.R**2 - self.area() <= self.mu:
            raise ValueError(
                f"exterior volume {math.pi * self.R**2 - self.area():.4g} "
                f"cannot hold mu={self.mu:.4g}"
            )

    def area(self) -> float:
        """Exact 2D area of D (shoelace for polygons)."""
        if self.shape == "disk":
            return math.pi * float(self.params["a"]) ** 2
        if self.shape == "rect":
            (x0, y0), (x1, y1) = self.params["corners"]
            return (x1 - x0) * (y1 - y0)
        verts = self.params["vertices"]
        s = 0.0
        for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
            s += x0 * y1 - x1 * y0
        return abs(s) / 2.0

    def width(self) -> float:
        """Smallest extent of D, used to decide whether a grid resolves it."""
        if self.shape == "disk":
            return 2.0 * float(self.params["a"])
        if self.shape == "rect":
            (x0, y0), (x1, y1) = self.params["corners"]
            return min(x1 - x0, y1 - y0)
        verts = np.asarray(self.params["vertices"], dtype=float)
        return float(min(np.ptp(verts[:, 0]), np.ptp(verts[:, 1])))

    def contains(self, X, Y) -> np.ndarray:
        """Analytic inclusion test for node coordinates (closed D)."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if self.shape == "disk":
            cx, cy = self.params.get("center", (0.0, 0.0))
            return np.hypot(X - cx, Y - cy) <= float(self.params["a"])
        if self.shape == "rect":
            (x0, y0), (x1, y1) = self.params["corners"]
            return (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)
        vx = [float(v[0]) for v in self.params["vertices"]]
        vy = [float(v[1]) for v in self.params["vertices"]]
        inside = _polygon_contains(vx, vy, X, Y)
        # include boundary nodes within roundoff of an edge
        d = self.distance(X, Y)
        return inside | (d <= 0.0)

    def distance(self, X, Y) -> np.ndarray:
        """Euclidean distance to the closed set D (zero inside)."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if self.shape == "disk":
            cx, cy = self.params.get("center", (0.0, 0.0))
            return np.maximum(np.hypot(X - cx, Y - cy) - float(self.params["a"]), 0.0)
        if self.shape == "rect":
            (x0, y0), (x1, y1) = self.params["corners"]
            dx = np.maximum(np.maximum(x0 - X, X - x1), 0.0)
            dy = np.maximum(np.maximum(y0 - Y, Y - y1), 0.0)
            return np.hypot(dx, dy)
        verts = self.params["vertices"]
        d = np.full(X.shape, np.inf)
        for (ax, ay), (bx, by) in zip(verts, verts[1:] + verts[:1]):
            d = np.minimum(d, _segment_distance(X, Y, ax, ay, bx, by))
        vx = [float(v[0]) for v in verts]
        vy = [float(v[1]) for v in verts]
        d[_polygon_contains(vx, vy, X, Y)] = 0.0
        return d


@dataclass(frozen=True)
class DomainMasks:
    """Per-node classification of a grid against a DomainSpec.

    The labels array partitions the nodes: INSIDE_D, BAND (Omega nodes with a
    D neighbor), OMEGA (remaining Omega_R nodes) and OUTSIDE (on or beyond
    the sphere of radius R).  ``dist_D`` caches the analytic distance to D
    for collar and clearance queries.  Arrays are read-only; masks are safe
    to share between concurrent solves.
    """

    grid: Grid
    spec: DomainSpec
    labels: np.ndarray
    dist_D: np.ndarray

    @property
    def inside_D(self) -> np.ndarray:
        return self.labels == INSIDE_D

    @property
    def boundary_band(self) -> np.ndarray:
        return self.labels == BAND

    @property
    def omega(self) -> np.ndarray:
        """All Omega_R nodes (band included)."""
        return (self.labels == BAND) | (self.labels == OMEGA)

    @property
    def outside(self) -> np.ndarray:
        return self.labels == OUTSIDE

    @property
    def d_measure(self) -> float:
        """Discrete measure |D|_h."""
        return float(np.count_nonzero(self.inside_D)) * self.grid.cell_volume

    @property
    def omega_measure(self) -> float:
        """Discrete measure |Omega_R|_h."""
        return float(np.count_nonzero(self.omega)) * self.grid.cell_volume


def build_grid(spec: DomainSpec, resolution: int, dim: int = 2) -> Grid:
    """Build the uniform grid covering [-R-2h, R+2h]^dim.

    The spacing solves (resolution - 5) * h = 2R, so the outermost two rings
    of nodes lie outside B_R and admissible fields vanish there with room for
    a full difference stencil.

    Raises
    ------
    ValueError
        If the resolution cannot resolve D with at least 4 nodes across it.
    """
    if resolution < 6:
        raise ValueError(f"grid too coarse: resolution {resolution} < 6")
    h = 2.0 * spec.R / (resolution - 5)
    if spec.width() / h < 4.0:
        raise ValueError(
            f"grid too coarse: fewer than 4 nodes across D (width {spec.width():.3g}, h {h:.3g})"
        )
    origin = (-spec.R - 2 * h, -spec.R - 2 * h if dim == 2 else 0.0)
    return Grid(nx=resolution, ny=resolution if dim == 2 else 1, h=h, origin=origin)


def build_grid_from_spacing(spec: DomainSpec, h: float, dim: int = 2) -> Grid:
    """Build a grid with (approximately) the given spacing.

    The node count is rounded so that (resolution - 5) * h' = 2R with h' as
    close to ``h`` as possible; used for same-h comparisons across different
    outer radii.
    """
    resolution = int(round(2.0 * spec.R / h)) + 5
    return build_grid(spec, resolution, dim=dim)


def rasterize(spec: DomainSpec, grid: Grid) -> DomainMasks:
    """Classify every node and report discrete measures.

    Raises
    ------
    ValueError
        If the discrete exterior cannot hold mu, i.e. |Omega_R|_h <= mu.
    """
    X, Y = grid.coords()
    inside = spec.contains(X, Y)
    r = np.hypot(X, Y) if grid.dim == 2 else np.abs(X)
    outside = r >= spec.R
    if np.any(inside & outside):
        raise ValueError("D is not resolved inside B_R on this grid")
    omega_all = ~inside & ~outside

    has_d_neighbor = np.zeros_like(inside)
    has_d_neighbor[1:, :] |= inside[:-1, :]
    has_d_neighbor[:-1, :] |= inside[1:, :]
    if grid.dim == 2:
        has_d_neighbor[:, 1:] |= inside[:, :-1]
        has_d_neighbor[:, :-1] |= inside[:, 1:]

    labels = np.full(grid.shape, OMEGA, dtype=np.int8)
    labels[outside] = OUTSIDE
    labels[omega_all & has_d_neighbor] = BAND
    labels[inside] = INSIDE_D

    dist = spec.distance(X, Y)
    labels.setflags(write=False)
    dist.setflags(write=False)
    masks = DomainMasks(grid=grid, spec=spec, labels=labels, dist_D=dist)
    if masks.omega_measure <= spec.mu:
        raise ValueError(
            f"insufficient exterior volume: |Omega_R|_h = {masks.omega_measure:.4g} <= mu = {spec.mu:.4g}"
        )
    return masks


# ---------------------------------------------------------------------------
# Obstacles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObstaclePair:
    """Analytic lower/upper obstacle pair.

    ``phi`` and ``psi`` evaluate values at coordinates; ``phi_laplacian`` and
    ``psi_laplacian`` give the exact Laplacian (dimension-dependent) where the
    preset is twice differentiable.  ``on_grid`` materializes and validates
    the standing hypotheses on a concrete mask set.
    """

    kind: str
    params: dict
    phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    psi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi_laplacian: Callable[[np.ndarray, np.ndarray, int], np.ndarray]
    psi_laplacian: Callable[[np.ndarray, np.ndarray, int], np.ndarray]
    smooth: bool = True

    def on_grid(self, masks: DomainMasks) -> "BoundObstacles":
        return bind_obstacles(self, masks)


@dataclass(frozen=True)
class BoundObstacles:
    """Obstacle values materialized on D and its boundary band."""

    pair: ObstaclePair
    phi: np.ndarray
    psi: np.ndarray
    lap_phi: np.ndarray
    lap_psi: np.ndarray
    sup_phi: float

    @property
    def c2_scale(self) -> float:
        """Crude C^2 magnitude of the pair, used in residual thresholds."""
        return float(
            max(
                np.max(np.abs(self.phi), initial=0.0),
                np.max(np.abs(self.psi), initial=0.0),
                np.max(np.abs(self.lap_phi), initial=0.0),
                np.max(np.abs(self.lap_psi), initial=0.0),
            )
        )


def bind_obstacles(pair: ObstaclePair, masks: DomainMasks) -> BoundObstacles:
    """Evaluate the pair on D union band and check the hypotheses.

    Raises
    ------
    ValueError
        If phi <= psi fails anywhere in D, phi < psi fails on the band, or
        phi is not strictly positive on the closed domain.
    """
    X, Y = masks.grid.coords()
    dim = masks.grid.dim
    phi = np.asarray(pair.phi(X, Y), dtype=float)
    psi = np.asarray(pair.psi(X, Y), dtype=float)
    lap_phi = np.asarray(pair.phi_laplacian(X, Y, dim), dtype=float)
    lap_psi = np.asarray(pair.psi_laplacian(X, Y, dim), dtype=float)
    d_nodes = masks.inside_D
    band = masks.boundary_band
    closure = d_nodes | band
    if np.any(phi[closure] <= 0.0):
        raise ValueError(f"obstacle preset {pair.kind!r}: phi must be positive on closure(D)")
    if np.any(phi[d_nodes] > psi[d_nodes]):
        raise ValueError(f"obstacle preset {pair.kind!r}: phi <= psi violated in D")
    if np.any(phi[band] >= psi[band]):
        raise ValueError(f"obstacle preset {pair.kind!r}: phi < psi violated on the boundary band")
    for arr in (phi, psi, lap_phi, lap_psi):
        arr.setflags(write=False)
    sup_phi = float(np.max(phi[closure])) if np.any(closure) else float(np.max(phi))
    return BoundObstacles(pair=pair, phi=phi, psi=psi, lap_phi=lap_phi, lap_psi=lap_psi, sup_phi=sup_phi)


def as_bound(obstacles, masks: DomainMasks) -> BoundObstacles:
    """Accept either an analytic pair or an already-bound one."""
    if isinstance(obstacles, BoundObstacles):
        return obstacles
    if isinstance(obstacles, ObstaclePair):
        return bind_obstacles(obstacles, masks)
    raise TypeError(f"expected ObstaclePair or BoundObstacles, got {type(obstacles)!r}")


def _const(value):
    def f(X, Y):
        return np.full(np.shape(X), float(value))

    return f


def _zero_lap(X, Y, dim):
    return np.zeros(np.shape(X))


def _make_constant(params):
    lower = float(params.get("lower", 1.0))
    upper = float(params.get("upper", 2.0))
    if lower <= 0:
        raise ValueError("constant pair: lower obstacle must be positive")
    if upper <= lower:
        raise ValueError("constant pair: requires lower < upper (phi < psi on the boundary)")
    return ObstaclePair(
        kind="constant",
        params={"lower": lower, "upper": upper},
        phi=_const(lower),
        psi=_const(upper),
        phi_laplacian=_zero_lap,
        psi_laplacian=_zero_lap,
    )


def _make_paraboloid(params):
    peak = float(params.get("peak", 1.5))
    curvature = float(params.get("curvature", 0.5))
    upper = float(params.get("upper", peak + 0.5))
    cx, cy = params.get("center", (0.0, 0.0))
    if peak <= 0 or curvature < 0:
        raise ValueError("paraboloid pair: peak must be positive, curvature nonnegative")
    if upper <= 0:
        raise ValueError("paraboloid pair: upper obstacle must be positive")

    def phi(X, Y):
        return peak - curvature * ((np.asarray(X) - cx) ** 2 + (np.asarray(Y) - cy) ** 2)

    def phi_lap(X, Y, dim):
        return np.full(np.shape(X), -2.0 * dim * curvature)

    return ObstaclePair(
        kind="paraboloid",
        params={"peak": peak, "curvature": curvature, "upper": upper, "center": (cx, cy)},
        phi=phi,
        psi=_const(upper),
        phi_laplacian=phi_lap,
        psi_laplacian=_zero_lap,
    )


def _make_touching(params):
    level = float(params.get("level", 2.0))
    stiffness = float(params.get("stiffness", 1.0))
    contact_radius = float(params.get("contact_radius", 0.5))
    cx, cy = params.get("center", (0.0, 0.0))
    if level <= 0 or stiffness <= 0 or contact_radius <= 0:
        raise ValueError("touching pair: level, stiffness, contact_radius must be positive")

    def phi(X, Y):
        r = np.hypot(np.asarray(X) - cx, np.asarray(Y) - cy)
        return level - stiffness * np.maximum(r - contact_radius, 0.0) ** 2

    def phi_lap(X, Y, dim):
        r = np.hypot(np.asarray(X) - cx, np.asarray(Y) - cy)
        s = np.maximum(r - contact_radius, 0.0)
        if dim == 1:
            return np.where(s > 0, -2.0 * stiffness, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lap = -stiffness * (2.0 + 2.0 * s / np.where(r > 0, r, np.inf))
        return np.where(s > 0, lap, 0.0)

    return ObstaclePair(
        kind="touching",
        params={
            "level": level,
            "stiffness": stiffness,
            "contact_radius": contact_radius,
            "center": (cx, cy),
        },
        phi=phi,
        psi=_const(level),
        phi_laplacian=phi_lap,
        psi_laplacian=_zero_lap,
    )


def _make_tent(params):
    base = float(params.get("base", 1.0))
    height = float(params.get("height", 0.5))
    radius = float(params.get("radius", 0.5))
    upper = float(params.get("upper", base + height + 0.5))
    cx, cy = params.get("center", (0.0, 0.0))
    if base <= 0 or height < 0 or radius <= 0:
        raise ValueError("tent pair: base and radius must be positive, height nonnegative")
    if upper <= base + height:
        raise ValueError("tent pair: upper obstacle must clear the tent apex")

    def phi(X, Y):
        r = np.hypot(np.asarray(X) - cx, np.asarray(Y) - cy)
        return base + height * np.maximum(1.0 - r / radius, 0.0)

    def phi_lap(X, Y, dim):
        # Lipschitz only: the cone has no bounded Laplacian at the apex.
        r = np.hypot(np.asarray(X) - cx, np.asarray(Y) - cy)
        if dim == 1:
            return np.zeros(np.shape(X))
        with np.errstate(divide="ignore"):
            lap = -(height / radius) / np.where(r > 0, r, np.nan)
        return np.where((r < radius) & (r > 0), lap, 0.0)

    return ObstaclePair(
        kind="tent",
        params={"base": base, "height": height, "radius": radius, "upper": upper, "center": (cx, cy)},
        phi=phi,
        psi=_const(upper),
        phi_laplacian=phi_lap,
        psi_laplacian=_zero_lap,
        smooth=False,
    )


OBSTACLE_PRESETS = {
    "constant": _make_constant,
    "paraboloid": _make_paraboloid,
    "touching": _make_touching,
    "tent": _make_tent,
}


def make_obstacles(kind: str, params: dict | None = None) -> ObstaclePair:
    """Construct an obstacle preset by name.

    Structural violations (e.g. equal constants, which break phi < psi on the
    boundary) are rejected immediately; per-node hypotheses are re-checked
    when the pair is bound to a grid.
    """
    if kind not in OBSTACLE_PRESETS:
        raise ValueError(f"unknown obstacle preset {kind!r}; available: {sorted(OBSTACLE_PRESETS)}")
    return OBSTACLE_PRESETS[kind](params or {})


def domain_from_config(cfg: dict) -> tuple[DomainSpec, ObstaclePair]:
    """Parse the JSON configuration object for a domain.

    Expected layout::

        {"shape": "disk"|"rect"|"polygon", "params": {...},
         "R": number, "mu": number,
         "obstacles": {"kind": ..., "params": {...}}}
    """
    shape = cfg["shape"]
    params = dict(cfg.get("params", {}))
    if shape == "rect" and "corners" in params:
        params["corners"] = [tuple(c) for c in params["corners"]]
    if shape == "polygon" and "vertices" in params:
        params["vertices"] = [tuple(v) for v in params["vertices"]]
    spec = DomainSpec(shape=shape, params=params, R=float(cfg["R"]), mu=float(cfg["mu"]))
    obs_cfg = cfg.get("obstacles", {"kind": "constant"})
    obstacles = make_obstacles(obs_cfg["kind"], obs_cfg.get("params"))
    return spec, obstacles
