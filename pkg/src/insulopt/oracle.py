"""Independent ground truth used to certify the main solver.

The radial solution handles the disk-with-constant-obstacle geometry in
closed form (harmonic fill between two circles is the energy minimizer for
fixed boundary values, and shrinking the outer circle only raises the
energy, so the annulus of exact volume mu is optimal).  The 1D brute force
enumerates every positivity pattern of a short chain and solves each pattern
exactly, making no structural assumption the theory would otherwise supply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from insulopt.domain import Grid
from insulopt.energy import PenaltyParams, ScalarField, f_eps

__all__ = [
    "RadialSolution",
    "radial_solution",
    "BruteForceResult",
    "brute_force_1d",
    "SlabSolution",
    "slab_solution",
]


@dataclass(frozen=True)
class RadialSolution:
    """Exact minimizer for disk D of radius a, constant inner value c, volume mu.

    u equals c on the disk, c*ln(b/r)/ln(b/a) on the annulus a <= r <= b with
    b = sqrt(a^2 + mu/pi), and zero beyond.
    """

    a: float
    c: float
    mu: float

    @property
    def b(self) -> float:
        return math.sqrt(self.a**2 + self.mu / math.pi)

    @property
    def energy(self) -> float:
        return 2.0 * math.pi * self.c**2 / math.log(self.b / self.a)

    @property
    def volume(self) -> float:
        return self.mu

    @property
    def gradient_jump(self) -> float:
        """|u'(b)|, the normal derivative magnitude at the free boundary."""
        return self.c / (self.b * math.log(self.b / self.a))

    @property
    def max_gradient(self) -> float:
        """|u'(a)|, the largest slope of the radial profile."""
        return self.c / (self.a * math.log(self.b / self.a))

    def u(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            ann = self.c * np.log(self.b / np.maximum(r, 1e-300)) / math.log(self.b / self.a)
        return np.where(r <= self.a, self.c, np.where(r < self.b, ann, 0.0))

    def u_prime_abs(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            mag = self.c / (np.maximum(r, 1e-300) * math.log(self.b / self.a))
        return np.where((r > self.a) & (r < self.b), mag, 0.0)

    def field_on(self, grid: Grid) -> ScalarField:
        X, Y = grid.coords()
        r = np.hypot(X, Y) if grid.dim == 2 else np.abs(X)
        return ScalarField(grid, self.u(r))


def radial_solution(a: float, c: float, mu: float) -> RadialSolution:
    """Closed-form radial oracle; energy blows up as mu -> 0 (b -> a)."""
    if a <= 0 or c <= 0 or mu <= 0:
        raise ValueError("radial solution requires a > 0, c > 0, mu > 0")
    return RadialSolution(a=a, c=c, mu=mu)


@dataclass(frozen=True)
class BruteForceResult:
    energy: float
    pattern: tuple[int, ...]
    field: np.ndarray
    measure: float
    d_index: int


def _pattern_minimum(fixed: np.ndarray, free_mask: np.ndarray, h: float) -> np.ndarray:
    """Minimize the 1D chain Dirichlet energy over the free nodes.

    Nodes outside ``free_mask`` are anchored at ``fixed``.  The optimum is
    discrete-harmonic on each maximal free run, i.e. linear interpolation
    between its anchors; runs not touching a nonzero anchor collapse to zero.
    """
    u = fixed.copy()
    n = len(u)
    i = 0
    while i < n:
        if not free_mask[i]:
            i += 1
            continue
        j = i
        while j < n and free_mask[j]:
            j += 1
        left = u[i - 1] if i > 0 else 0.0
        right = u[j] if j < n else 0.0
        length = j - i + 1
        for k in range(i, j):
            t = (k - i + 1) / length
            u[k] = left + t * (right - left)
        i = j
    return u


def brute_force_1d(
    n_omega: int,
    phi_value: float,
    mu_cells: int,
    p: PenaltyParams,
    h: float = 1.0,
    layout: str = "right",
    arms: tuple[int, int] | None = None,
) -> BruteForceResult:
    """Exhaustive minimizer of the discrete penalized energy on a 1D chain.

    The chain holds one D node pinned at ``phi_value`` (phi = psi there) and
    ``n_omega`` exterior nodes ending at zero anchors.  ``layout="right"``
    puts D at the left end; ``layout="two_sided"`` puts D between two
    exterior arms, split evenly unless ``arms=(n_left, n_right)`` says
    otherwise.  All 2^n_omega positivity patterns are tried; for each, the
    energy is minimized with the off-pattern nodes forced to zero, and the
    penalty is evaluated with the sharp node-count measure actually achieved
    by that minimizer.  Patterns are scanned in a fixed order and ties keep
    the earlier pattern.
    """
    if n_omega > 14:
        raise ValueError(f"n_omega = {n_omega} too large for exhaustive enumeration (max 14)")
    if n_omega < 1:
        raise ValueError("need at least one exterior node")
    if layout == "right":
        d_index = 0
        omega_indices = list(range(1, n_omega + 1))
        n_nodes = n_omega + 2  # trailing zero anchor on the sphere
    elif layout == "two_sided":
        if arms is None:
            if n_omega % 2 != 0:
                raise ValueError("two_sided layout needs an even n_omega or explicit arms")
            arms = (n_omega // 2, n_omega // 2)
        n_left, n_right = arms
        if n_left + n_right != n_omega or n_left < 1 or n_right < 1:
            raise ValueError(f"arms {arms} inconsistent with n_omega = {n_omega}")
        d_index = n_left + 1
        omega_indices = list(range(1, n_left + 1)) + list(range(n_left + 2, n_omega + 2))
        n_nodes = n_omega + 3  # zero anchors at both ends
    else:
        raise ValueError(f"unknown layout {layout!r}")

    fixed = np.zeros(n_nodes)
    fixed[d_index] = phi_value
    p_eff = PenaltyParams(p.eps, mu_cells * h, p.tau, p.pos_threshold)
    best_energy = math.inf
    best = None

    for bits in range(2**n_omega):
        free = np.zeros(n_nodes, dtype=bool)
        for k, idx in enumerate(omega_indices):
            if bits >> k & 1:
                free[idx] = True
        u = _pattern_minimum(fixed, free, h)
        e_dir = float(np.sum(np.diff(u) ** 2)) / h
        count = int(np.count_nonzero(u[omega_indices] > p.pos_threshold))
        energy = e_dir + f_eps(count * h, p_eff)
        if energy < best_energy:
            best_energy = energy
            best = (bits, u, count)

    bits, u, count = best
    pattern = tuple(idx for k, idx in enumerate(omega_indices) if bits >> k & 1)
    return BruteForceResult(
        energy=best_energy,
        pattern=pattern,
        field=u,
        measure=count * h,
        d_index=d_index,
    )


@dataclass(frozen=True)
class SlabSolution:
    """Linear decay profile normal to a flat face: u = c (1 - x/d)+."""

    c: float
    d: float

    @property
    def gradient_jump(self) -> float:
        return self.c / self.d

    @property
    def energy_per_length(self) -> float:
        return self.c**2 / self.d

    def u(self, x):
        x = np.asarray(x, dtype=float)
        return self.c * np.clip(1.0 - x / self.d, 0.0, None)


def slab_solution(c: float, d: float) -> SlabSolution:
    if c <= 0 or d <= 0:
        raise ValueError("slab solution requires c > 0 and d > 0")
    return SlabSolution(c=c, d=d)
