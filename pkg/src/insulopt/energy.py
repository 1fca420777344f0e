"""Discrete Dirichlet energy, volume penalty, and descent direction.

The discrete functional mirrors the continuum one: forward-difference
Dirichlet energy plus a piecewise-linear penalty f_eps applied to the measure
of the positive phase outside D.  For descent we use a differentiable
surrogate in which the sharp indicator is replaced by a clipped linear ramp
of width tau; the ramp's derivative is piecewise constant, so the analytic
gradient matches finite differences of the smoothed functional exactly away
from the kinks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from insulopt.domain import DomainMasks, Grid

__all__ = [
    "ScalarField",
    "PenaltyParams",
    "EnergyBreakdown",
    "f_eps",
    "f_eps_slope",
    "dirichlet_energy",
    "positivity_volume",
    "smoothed_volume",
    "penalized_energy",
    "penalized_energy_smoothed",
    "energy_breakdown",
    "descent_direction",
    "laplacian",
    "inner_product",
]

_BIN_MAGIC = b"OFGD"


@dataclass
class ScalarField:
    """One real value per grid node.

    Fields representing admissible states vanish on and outside the sphere of
    radius R; that is enforced by projection in the solver, not here.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        X, Y = grid.coords()
        return cls(grid, np.asarray(fn(X, Y), dtype=float))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    # -- serialization -----------------------------------------------------

    def write_csv(self, path) -> None:
        """Write ``x,y,u`` rows, y varying slowest."""
        X, Y = self.grid.coords()
        with open(path, "w") as f:
            f.write("x,y,u\n")
            for j in range(self.grid.ny):
                for i in range(self.grid.nx):
                    f.write(f"{X[i, j]:.17g},{Y[i, j]:.17g},{self.values[i, j]:.17g}\n")

    def write_binary(self, path) -> None:
        """Compact little-endian dump: magic, dims, spacing, origin, doubles."""
        with open(path, "wb") as f:
            f.write(_BIN_MAGIC)
            f.write(struct.pack("<ii", self.grid.nx, self.grid.ny))
            f.write(struct.pack("<ddd", self.grid.h, *self.grid.origin))
            f.write(self.values.astype("<f8").tobytes(order="C"))

    @classmethod
    def read_binary(cls, path) -> "ScalarField":
        raw = Path(path).read_bytes()
        if raw[:4] != _BIN_MAGIC:
            raise ValueError("not a field dump (bad magic)")
        nx, ny = struct.unpack("<ii", raw[4:12])
        h, ox, oy = struct.unpack("<ddd", raw[12:36])
        values = np.frombuffer(raw[36:], dtype="<f8", count=nx * ny).reshape(nx, ny).copy()
        return cls(Grid(nx=nx, ny=ny, h=h, origin=(ox, oy)), values)


@dataclass(frozen=True)
class PenaltyParams:
    """Penalization parameter set.

    eps in (0, 1) controls the two slopes of the volume penalty, mu is the
    target exterior volume, tau the width of the smoothed indicator ramp and
    pos_threshold the cutoff defining the discrete positive phase.
    """

    eps: float
    mu: float
    tau: float
    pos_threshold: float

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must be in (0, 1), got {self.eps}")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.pos_threshold < 0:
            raise ValueError(f"pos_threshold must be nonnegative, got {self.pos_threshold}")

    @classmethod
    def for_scale(cls, eps: float, mu: float, sup_phi: float, tau: float | None = None,
                  pos_threshold: float | None = None) -> "PenaltyParams":
        """Defaults tied to the obstacle scale: tau = 1e-3 sup phi, threshold = 1e-8 sup phi."""
        if sup_phi <= 0:
            raise ValueError("sup_phi must be positive")
        return cls(
            eps=eps,
            mu=mu,
            tau=tau if tau is not None else 1e-3 * sup_phi,
            pos_threshold=pos_threshold if pos_threshold is not None else 1e-8 * sup_phi,
        )

    def with_tau(self, tau: float) -> "PenaltyParams":
        return replace(self, tau=tau)


def f_eps(t: float, p: PenaltyParams) -> float:
    """Volume penalty: eps*(t-mu) below the target, (t-mu)/eps above it."""
    t = float(t)
    if t <= p.mu:
        return p.eps * (t - p.mu)
    return (t - p.mu) / p.eps


def f_eps_slope(t: float, p: PenaltyParams) -> float:
    """One-sided slope of f_eps used by descent (lower branch at t = mu)."""
    return p.eps if t <= p.mu else 1.0 / p.eps


def dirichlet_energy(u: ScalarField) -> float:
    """Forward-difference Dirichlet energy sum |grad_h u|^2 h^d."""
    v = u.values
    h = u.grid.h
    w = h ** (u.grid.dim - 2)
    e = float(np.sum(np.diff(v, axis=0) ** 2))
    if u.grid.dim == 2:
        e += float(np.sum(np.diff(v, axis=1) ** 2))
    return w * e


def positivity_volume(u: ScalarField, masks: DomainMasks, p: PenaltyParams) -> float:
    """h^d times the number of Omega_R nodes above the positivity threshold."""
    return u.grid.cell_volume * float(np.count_nonzero(masks.omega & (u.values > p.pos_threshold)))


def smoothed_volume(u: ScalarField, masks: DomainMasks, p: PenaltyParams) -> float:
    """Ramp-smoothed positive-phase measure over Omega_R.

    The ramp H_tau is 0 for s <= 0, s/tau on (0, tau) and 1 beyond; it
    converges to the sharp indicator from below as tau decreases.
    """
    v = u.values[masks.omega]
    return u.grid.cell_volume * float(np.sum(np.clip(v, 0.0, p.tau)) / p.tau)


def penalized_energy(u: ScalarField, masks: DomainMasks, p: PenaltyParams) -> float:
    """Dirichlet energy plus f_eps of the sharp positive-phase measure."""
    return dirichlet_energy(u) + f_eps(positivity_volume(u, masks, p), p)


def penalized_energy_smoothed(u: ScalarField, masks: DomainMasks, p: PenaltyParams) -> float:
    """Dirichlet energy plus f_eps of the ramp-smoothed measure (descent surrogate)."""
    return dirichlet_energy(u) + f_eps(smoothed_volume(u, masks, p), p)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    volume: float
    volume_smoothed: float
    penalized: float
    penalized_smoothed: float


def energy_breakdown(u: ScalarField, masks: DomainMasks, p: PenaltyParams) -> EnergyBreakdown:
    e = dirichlet_energy(u)
    vol = positivity_volume(u, masks, p)
    vol_s = smoothed_volume(u, masks, p)
    return EnergyBreakdown(
        dirichlet=e,
        volume=vol,
        volume_smoothed=vol_s,
        penalized=e + f_eps(vol, p),
        penalized_smoothed=e + f_eps(vol_s, p),
    )


def laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Five-point (three-point in 1D) Laplacian with zero padding outside the grid."""
    h2 = grid.h * grid.h
    out = -2.0 * grid.dim * values.copy()
    out[1:, :] += values[:-1, :]
    out[:-1, :] += values[1:, :]
    if grid.dim == 2:
        out[:, 1:] += values[:, :-1]
        out[:, :-1] += values[:, 1:]
    out /= h2
    return out


def inner_product(a: ScalarField, b: ScalarField) -> float:
    """Discrete L2 pairing with the h^d cell weight."""
    return a.grid.cell_volume * float(np.sum(a.values * b.values))


def descent_direction(u: ScalarField, masks: DomainMasks, p: PenaltyParams) -> ScalarField:
    """Negative gradient of the smoothed penalized functional.

    Equals 2 Delta_h u minus the volume-penalty force f'_eps(vol_tau) H'_tau(u)
    on Omega_R nodes (the force acts only where 0 < u < tau; both one-sided
    ramp derivatives at the kinks are taken as zero).  Nodes on or outside the
    sphere of radius R get a zero direction.  Interior D nodes carry the pure
    Dirichlet term, the obstacle constraints being handled by projection.
    """
    v = u.values
    g = 2.0 * laplacian(v, u.grid)
    slope = f_eps_slope(smoothed_volume(u, masks, p), p)
    ramp = masks.omega & (v > 0.0) & (v < p.tau)
    g[ramp] -= slope / p.tau
    g[masks.outside] = 0.0
    return ScalarField(u.grid, g)
