"""Free-boundary extraction and geometric diagnostics.

Contours of the positive phase are traced with marching squares at the
positivity threshold, restricted to cells whose corners all lie in Omega_R.
Gradient jumps along the interface are estimated with one-sided offset
stencils reaching into the positive phase, skipping the kink cell itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from insulopt.domain import DomainMasks
from insulopt.energy import PenaltyParams, ScalarField

__all__ = [
    "FreeBoundary",
    "LambdaEstimate",
    "extract_free_boundary",
    "estimate_lambda",
    "support_radius",
    "clearance_check",
    "nondegeneracy_scan",
    "density_scan",
]

# marching-squares segment table: edge pairs per corner-sign index;
# edges are 0 bottom, 1 right, 2 top, 3 left; corners (i,j),(i+1,j),(i+1,j+1),(i,j+1)
_SEGMENTS = {
    0: [],
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(2, 3)],
    9: [(0, 2)],
    11: [(1, 2)],
    12: [(3, 1)],
    13: [(0, 1)],
    14: [(3, 0)],
    15: [],
}


@dataclass
class FreeBoundary:
    """Contour chains of the positive phase in Omega_R.

    ``polylines`` is a list of (k, 2) point arrays; ``normals`` matches it
    with unit vectors pointing out of the positive phase.  ``status`` is
    "ok", "empty" (no positive phase or no crossing in Omega), or
    "touches_outer" (positive phase reaches the sphere of radius R, so the
    exterior contour is not closed inside the computational ball).
    """

    polylines: list[np.ndarray]
    normals: list[np.ndarray]
    total_length: float
    status: str
    level: float

    @property
    def n_chains(self) -> int:
        return len(self.polylines)


def _interp(level, pa, va, pb, vb):
    t = (level - va) / (vb - va)
    return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))


def _gradient_arrays(u: ScalarField):
    v = u.values
    h = u.grid.h
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[1:-1, :] = (v[2:, :] - v[:-2, :]) / (2 * h)
    gx[0, :] = (v[1, :] - v[0, :]) / h
    gx[-1, :] = (v[-1, :] - v[-2, :]) / h
    if u.grid.dim == 2:
        gy[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * h)
        gy[:, 0] = (v[:, 1] - v[:, 0]) / h
        gy[:, -1] = (v[:, -1] - v[:, -2]) / h
    return gx, gy


def _bilinear(arr: np.ndarray, grid, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    xs = (px - grid.origin[0]) / grid.h
    ys = (py - grid.origin[1]) / grid.h
    i0 = np.clip(np.floor(xs).astype(int), 0, grid.nx - 2)
    j0 = np.clip(np.floor(ys).astype(int), 0, max(grid.ny - 2, 0))
    tx = np.clip(xs - i0, 0.0, 1.0)
    ty = np.clip(ys - j0, 0.0, 1.0)
    if grid.ny == 1:
        return arr[i0, 0] * (1 - tx) + arr[i0 + 1, 0] * tx
    return (
        arr[i0, j0] * (1 - tx) * (1 - ty)
        + arr[i0 + 1, j0] * tx * (1 - ty)
        + arr[i0, j0 + 1] * (1 - tx) * ty
        + arr[i0 + 1, j0 + 1] * tx * ty
    )


def _edge_gradient_scale(u: ScalarField, masks: DomainMasks) -> float:
    """Largest slope in the outer half of the value range of Omega."""
    v = u.values
    h = u.grid.h
    fringe = masks.omega & (v <= 0.5 * max(float(np.max(v)), 1e-300))
    gmax = 0.0
    dx = np.abs(np.diff(v, axis=0)) / h
    sel = fringe[:-1, :] & fringe[1:, :]
    if np.any(sel):
        gmax = max(gmax, float(np.max(dx[sel])))
    if u.grid.dim == 2:
        dy = np.abs(np.diff(v, axis=1)) / h
        sel = fringe[:, :-1] & fringe[:, 1:]
        if np.any(sel):
            gmax = max(gmax, float(np.max(dy[sel])))
    return gmax


def extract_free_boundary(u: ScalarField, masks: DomainMasks, p: PenaltyParams) -> FreeBoundary:
    """Marching-squares contours of the positive phase in Omega_R.

    Cells touching D or the exterior of B_R are excluded, so the chains trace
    only the free part of the boundary of the positive phase.  The contour
    level is the positivity threshold lifted to O(h) inside the positive
    phase (about one cell below the interface): at the raw threshold every
    crossing degenerates onto the outermost zero nodes, because the kink of u
    is sub-cell, and length and normals would be staircase artifacts.
    """
    if u.grid.dim != 2:
        raise ValueError("free-boundary extraction requires a 2D grid")
    grid = u.grid
    v = u.values
    level = p.pos_threshold
    lifted = 1.25 * grid.h * _edge_gradient_scale(u, masks)
    vmax_omega = float(np.max(v[masks.omega], initial=0.0))
    if lifted > level and lifted < 0.5 * vmax_omega:
        level = lifted
    pos = v > level
    omega = masks.omega

    touches_outer = bool(
        np.any((v > p.pos_threshold) & omega & _dilate(masks.outside))
    )
    if not np.any(pos & omega):
        return FreeBoundary([], [], 0.0, "empty", level)

    ok_corner = ~masks.inside_D & ~masks.outside
    cell_ok = ok_corner[:-1, :-1] & ok_corner[1:, :-1] & ok_corner[1:, 1:] & ok_corner[:-1, 1:]
    s = pos.astype(np.int8)
    idx = s[:-1, :-1] + 2 * s[1:, :-1] + 4 * s[1:, 1:] + 8 * s[:-1, 1:]
    candidates = np.argwhere(cell_ok & (idx > 0) & (idx < 15))

    xs = grid.xs()
    ys = grid.ys()
    segments = []
    for i, j in candidates:
        corners = [
            ((xs[i], ys[j]), v[i, j]),
            ((xs[i + 1], ys[j]), v[i + 1, j]),
            ((xs[i + 1], ys[j + 1]), v[i + 1, j + 1]),
            ((xs[i], ys[j + 1]), v[i, j + 1]),
        ]
        case = int(idx[i, j])
        if case in (5, 10):
            center_pos = sum(c[1] for c in corners) / 4.0 > level
            if case == 5:
                pairs = [(3, 2), (0, 1)] if center_pos else [(3, 0), (1, 2)]
            else:
                pairs = [(3, 0), (1, 2)] if center_pos else [(0, 1), (2, 3)]
        else:
            pairs = _SEGMENTS[case]
        edge_pts = {}
        edge_corners = [(0, 1), (1, 2), (3, 2), (0, 3)]
        for e, (ca, cb) in enumerate(edge_corners):
            (pa, va), (pb, vb) = corners[ca], corners[cb]
            if (va > level) != (vb > level):
                edge_pts[e] = _interp(level, pa, va, pb, vb)
        for ea, eb in pairs:
            if ea in edge_pts and eb in edge_pts:
                segments.append((edge_pts[ea], edge_pts[eb]))

    if not segments:
        return FreeBoundary([], [], 0.0, "empty", level)

    chains = _stitch(segments, grid.h)
    gx, gy = _gradient_arrays(u)
    polylines, normals = [], []
    total = 0.0
    for chain in chains:
        pts = np.asarray(chain)
        polylines.append(pts)
        total += float(np.sum(np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))))
        nx_ = _bilinear(gx, grid, pts[:, 0], pts[:, 1])
        ny_ = _bilinear(gy, grid, pts[:, 0], pts[:, 1])
        mag = np.hypot(nx_, ny_)
        mag[mag == 0] = 1.0
        normals.append(np.column_stack([-nx_ / mag, -ny_ / mag]))

    status = "touches_outer" if touches_outer else "ok"
    return FreeBoundary(polylines, normals, total, status, level)


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    if mask.shape[1] > 1:
        out[:, 1:] |= mask[:, :-1]
        out[:, :-1] |= mask[:, 1:]
    return out


def _stitch(segments, h):
    """Join segments into polylines by matching endpoints."""
    def key(pt):
        return (round(pt[0] / h * 4096), round(pt[1] / h * 4096))

    adjacency: dict = {}
    for si, (a, b) in enumerate(segments):
        adjacency.setdefault(key(a), []).append((si, 0))
        adjacency.setdefault(key(b), []).append((si, 1))

    used = [False] * len(segments)
    chains = []

    def walk(si, end):
        chain = []
        while True:
            used[si] = True
            a, b = segments[si]
            first, last = (a, b) if end == 0 else (b, a)
            if not chain:
                chain.append(first)
            chain.append(last)
            nxt = None
            for sj, endj in adjacency.get(key(last), []):
                if not used[sj]:
                    nxt = (sj, endj)
                    break
            if nxt is None:
                return chain
            si, end = nxt

    endpoint_degree = {k: len(v) for k, v in adjacency.items()}
    order = sorted(range(len(segments)))
    # open chains first, started from degree-1 endpoints
    for si in order:
        if used[si]:
            continue
        a, b = segments[si]
        if endpoint_degree.get(key(a), 0) == 1:
            chains.append(walk(si, 0))
        elif endpoint_degree.get(key(b), 0) == 1:
            chains.append(walk(si, 1))
    for si in order:
        if not used[si]:
            chains.append(walk(si, 0))
    return chains


@dataclass(frozen=True)
class LambdaEstimate:
    """Per-sample gradient-jump magnitudes along the free boundary."""

    samples: np.ndarray
    mean: float
    std: float
    cv: float
    n_skipped: int

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)


def estimate_lambda(u: ScalarField, fb: FreeBoundary) -> LambdaEstimate:
    """One-sided normal derivative of u from the positive side.

    At each contour vertex, u is sampled along the inward normal at offsets
    2h, 4h, 6h; together with the contour level itself these give a
    one-sided derivative stencil that is exact through cubics.  Samples whose
    positive phase is thinner than 6h are skipped and counted.
    """
    if fb.n_chains == 0:
        raise ValueError("no free boundary to sample")
    grid = u.grid
    h = grid.h
    vals = []
    skipped = 0
    for pts, normals in zip(fb.polylines, fb.normals):
        for (x, y), (nx_, ny_) in zip(pts, normals):
            us = []
            good = True
            for k, d in enumerate((2 * h, 4 * h, 6 * h)):
                px, py = x - d * nx_, y - d * ny_
                if not (
                    grid.origin[0] <= px <= grid.origin[0] + (grid.nx - 1) * h
                    and grid.origin[1] <= py <= grid.origin[1] + (grid.ny - 1) * h
                ):
                    good = False
                    break
                uval = float(_bilinear(u.values, grid, np.array([px]), np.array([py]))[0])
                if uval <= fb.level:
                    good = False
                    break
                us.append(uval)
            if not good:
                skipped += 1
                continue
            lam = (-11 * fb.level + 18 * us[0] - 9 * us[1] + 2 * us[2]) / (12 * h)
            vals.append(lam)
    samples = np.asarray(vals)
    if samples.size == 0:
        return LambdaEstimate(samples, math.nan, math.nan, math.nan, skipped)
    mean = float(np.mean(samples))
    std = float(np.std(samples))
    return LambdaEstimate(samples, mean, std, std / abs(mean) if mean else math.inf, skipped)


def support_radius(u: ScalarField, p: PenaltyParams) -> float:
    """Largest distance from the origin among nodes above the threshold."""
    X, Y = u.grid.coords()
    r = np.hypot(X, Y) if u.grid.dim == 2 else np.abs(X)
    pos = u.values > p.pos_threshold
    if not np.any(pos):
        return 0.0
    return float(np.max(r[pos]))


def clearance_check(
    u: ScalarField, masks: DomainMasks, p: PenaltyParams, delta: float
) -> tuple[bool, float]:
    """Is u positive on every Omega node within distance delta of D?

    Returns (passed, minimum collar value); an empty collar passes vacuously.
    """
    collar = masks.omega & (masks.dist_D > 0.0) & (masks.dist_D <= delta)
    if not np.any(collar):
        return True, math.inf
    low = float(np.min(u.values[collar]))
    return low > p.pos_threshold, low


def _circle_average(u: ScalarField, cx: float, cy: float, r: float) -> float:
    n = max(16, int(math.ceil(2 * math.pi * r / u.grid.h)))
    ang = 2 * math.pi * np.arange(n) / n
    px = cx + r * np.cos(ang)
    py = cy + r * np.sin(ang)
    return float(np.mean(_bilinear(u.values, u.grid, px, py)))


def _ball_offsets(r_cells: int):
    k = np.arange(-r_cells, r_cells + 1)
    KX, KY = np.meshgrid(k, k, indexing="ij")
    inside = KX**2 + KY**2 <= r_cells**2
    return KX[inside], KY[inside]


def _sample_centers(masks: DomainMasks, margin: float, stride: int):
    grid = masks.grid
    X, Y = grid.coords()
    r = np.hypot(X, Y)
    ok = masks.omega & (masks.dist_D > margin) & (r < masks.spec.R - margin)
    ii, jj = np.nonzero(ok)
    sel = (ii % stride == 0) & (jj % stride == 0)
    return ii[sel], jj[sel]


def nondegeneracy_scan(
    u: ScalarField,
    masks: DomainMasks,
    p: PenaltyParams,
    C_probe: float,
    radii_cells: tuple[int, ...] = (4, 8, 16),
    stride: int = 4,
) -> tuple[list[dict], float]:
    """Scan balls in Omega for violations of the nondegeneracy dichotomy.

    A violation is a ball whose boundary-circle average of u is at most
    C_probe * sqrt(eps) * r while u is still positive somewhere in the
    half-radius ball.  Also returns the largest probe constant that would
    have produced no violations on the sampled balls.
    """
    grid = u.grid
    h = grid.h
    X, Y = grid.coords()
    violations = []
    c_max = math.inf
    sqrt_eps = math.sqrt(p.eps)
    for rc in radii_cells:
        r = rc * h
        ii, jj = _sample_centers(masks, r + h, stride)
        kx, ky = _ball_offsets(rc // 2)
        for i, j in zip(ii, jj):
            avg = _circle_average(u, X[i, j], Y[i, j], r)
            half = u.values[i + kx, j + ky]
            has_positive = bool(np.any(half > p.pos_threshold))
            if has_positive:
                c_max = min(c_max, avg / (sqrt_eps * r))
                if avg <= C_probe * sqrt_eps * r:
                    violations.append(
                        {"center": (float(X[i, j]), float(Y[i, j])), "r": float(r), "avg": avg}
                    )
    return violations, (0.0 if c_max == math.inf else float(c_max))


def density_scan(
    u: ScalarField,
    masks: DomainMasks,
    p: PenaltyParams,
    radii_cells: tuple[int, ...] = (4, 8, 16),
    stride: int = 4,
) -> float:
    """Minimum positive-phase density over sampled balls centered in {u > 0}."""
    grid = u.grid
    h = grid.h
    ratios = [1.0]
    for rc in radii_cells:
        ii, jj = _sample_centers(masks, rc * h + h, stride)
        kx, ky = _ball_offsets(rc)
        for i, j in zip(ii, jj):
            if u.values[i, j] <= p.pos_threshold:
                continue
            ball = u.values[i + kx, j + ky]
            ratios.append(float(np.count_nonzero(ball > p.pos_threshold)) / ball.size)
    return float(min(ratios))
