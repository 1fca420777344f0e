import math

import numpy as np
import pytest

from insulopt.domain import (
    DomainSpec,
    build_grid,
    build_grid_from_spacing,
    domain_from_config,
    make_obstacles,
    rasterize,
)


def disk_spec(a=1.0, R=4.0, mu=3 * math.pi):
    return DomainSpec(shape="disk", params={"a": a}, R=R, mu=mu)


def rect_spec(R=4.0, mu=6.0):
    return DomainSpec(shape="rect", params={"corners": [(-1.0, -1.0), (1.0, 1.0)]}, R=R, mu=mu)


class TestBuildGrid:
    def test_disk_spacing_matches_margin_rule(self):
        grid = build_grid(disk_spec(), 129)
        # (resolution - 5) * h = 2R
        assert grid.h == pytest.approx(8.0 / 124)
        assert grid.h == pytest.approx(0.0645, abs=2e-4)
        assert grid.nx == grid.ny == 129
        # grid covers [-R-2h, R+2h]
        assert grid.origin[0] == pytest.approx(-4.0 - 2 * grid.h)
        top = grid.origin[0] + (grid.nx - 1) * grid.h
        assert top == pytest.approx(4.0 + 2 * grid.h)

    def test_center_is_a_node_for_odd_resolution(self):
        grid = build_grid(disk_spec(), 129)
        assert np.min(np.abs(grid.xs())) < 1e-12

    def test_too_coarse_rejected(self):
        with pytest.raises(ValueError, match="too coarse"):
            build_grid(disk_spec(), 2)
        # 4-nodes-across-D rule
        with pytest.raises(ValueError, match="too coarse"):
            build_grid(disk_spec(a=0.05), 65)

    def test_rect_inside_area_converges(self):
        # offset corners so the edges do not ride on grid lines
        spec = DomainSpec(
            shape="rect", params={"corners": [(-1.03, -0.97), (1.01, 0.99)]}, R=4.0, mu=6.0
        )
        exact = 2.04 * 1.96
        errs = []
        for res in (65, 129, 257):
            grid = build_grid(spec, res)
            masks = rasterize(spec, grid)
            errs.append(abs(masks.d_measure - exact))
        assert errs[-1] < errs[0]
        assert errs[-1] / exact < 0.05

    def test_from_spacing_keeps_h(self):
        spec = disk_spec()
        grid = build_grid(spec, 257)
        spec_wide = disk_spec(R=6.0)
        grid_wide = build_grid_from_spacing(spec_wide, grid.h)
        assert grid_wide.h == pytest.approx(grid.h, rel=1e-12)


class TestRasterize:
    def test_partition(self):
        for spec, res in [(disk_spec(), 65), (rect_spec(), 97)]:
            grid = build_grid(spec, res)
            masks = rasterize(spec, grid)
            total = (
                masks.inside_D.astype(int)
                + masks.boundary_band.astype(int)
                + (masks.omega & ~masks.boundary_band).astype(int)
                + masks.outside.astype(int)
            )
            assert np.all(total == 1)

    def test_band_is_omega_with_d_neighbor(self):
        spec = disk_spec()
        masks = rasterize(spec, build_grid(spec, 65))
        band = masks.boundary_band
        inside = masks.inside_D
        neigh = np.zeros_like(inside)
        neigh[1:, :] |= inside[:-1, :]
        neigh[:-1, :] |= inside[1:, :]
        neigh[:, 1:] |= inside[:, :-1]
        neigh[:, :-1] |= inside[:, 1:]
        assert np.array_equal(band, masks.omega & neigh)

    def test_annulus_measure_matches_exact_area(self):
        spec = disk_spec()
        grid = build_grid_from_spacing(spec, 0.05)
        masks = rasterize(spec, grid)
        exact = math.pi * (16.0 - 1.0)
        assert masks.omega_measure == pytest.approx(exact, rel=0.02)

    def test_insufficient_exterior_volume(self):
        with pytest.raises(ValueError, match="cannot hold"):
            disk_spec(mu=50.0)
        # discrete check with a mu that passes the analytic test but is tight
        spec = DomainSpec(shape="disk", params={"a": 1.0}, R=4.0, mu=math.pi * 15.0 - 0.05)
        with pytest.raises(ValueError, match="insufficient exterior volume"):
            rasterize(spec, build_grid(spec, 33))

    def test_1d_omega_is_two_intervals(self):
        spec = disk_spec(mu=4.0)
        grid = build_grid(spec, 65, dim=1)
        masks = rasterize(spec, grid)
        xs = grid.xs()
        omega_x = xs[masks.omega[:, 0]]
        assert np.all((np.abs(omega_x) > 1.0) & (np.abs(omega_x) < 4.0))
        # one contiguous run per side
        signs = np.sign(omega_x)
        assert set(signs) == {-1.0, 1.0}

    def test_polygon_matches_rect(self):
        poly = DomainSpec(
            shape="polygon",
            params={"vertices": [(-1, -1), (1, -1), (1, 1), (-1, 1)]},
            R=4.0,
            mu=6.0,
        )
        grid = build_grid(poly, 97)
        m_poly = rasterize(poly, grid)
        m_rect = rasterize(rect_spec(), grid)
        assert np.array_equal(m_poly.inside_D, m_rect.inside_D)


class TestObstacles:
    def test_constant_pair(self):
        spec = disk_spec()
        masks = rasterize(spec, build_grid(spec, 65))
        pair = make_obstacles("constant", {"lower": 1.0, "upper": 2.0})
        bound = pair.on_grid(masks)
        assert np.all(bound.phi[masks.inside_D] == 1.0)
        assert np.all(bound.psi[masks.inside_D] == 2.0)
        assert bound.sup_phi == 1.0

    def test_equal_constants_rejected(self):
        with pytest.raises(ValueError, match="lower < upper"):
            make_obstacles("constant", {"lower": 1.0, "upper": 1.0})

    def test_nonpositive_lower_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            make_obstacles("constant", {"lower": 0.0, "upper": 1.0})

    def test_touching_pair_contact_set(self):
        spec = disk_spec()
        masks = rasterize(spec, build_grid(spec, 129))
        pair = make_obstacles("touching", {"level": 2.0, "stiffness": 1.0, "contact_radius": 0.5})
        bound = pair.on_grid(masks)
        X, Y = masks.grid.coords()
        r = np.hypot(X, Y)
        contact = masks.inside_D & (r <= 0.5)
        assert np.all(bound.phi[contact] == bound.psi[contact])
        assert np.all(bound.phi[masks.boundary_band] < bound.psi[masks.boundary_band])

    def test_paraboloid_positive_and_ordered(self):
        spec = disk_spec()
        masks = rasterize(spec, build_grid(spec, 65))
        pair = make_obstacles("paraboloid", {"peak": 1.5, "curvature": 0.5, "upper": 2.0})
        bound = pair.on_grid(masks)
        closure = masks.inside_D | masks.boundary_band
        assert np.all(bound.phi[closure] > 0)
        assert np.all(bound.phi[masks.inside_D] <= bound.psi[masks.inside_D])
        # exact laplacian of the paraboloid in 2D
        assert np.all(bound.lap_phi[masks.inside_D] == pytest.approx(-2.0))

    def test_binding_rejects_hypothesis_violations(self):
        spec = disk_spec()
        masks = rasterize(spec, build_grid(spec, 65))
        # paraboloid dipping non-positive on D
        pair = make_obstacles("paraboloid", {"peak": 0.3, "curvature": 1.0, "upper": 2.0})
        with pytest.raises(ValueError, match="positive"):
            pair.on_grid(masks)

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="unknown obstacle preset"):
            make_obstacles("staircase")


def test_domain_from_config_roundtrip():
    cfg = {
        "shape": "disk",
        "params": {"a": 1.0},
        "R": 4.0,
        "mu": 3 * math.pi,
        "obstacles": {"kind": "constant", "params": {"lower": 1.0, "upper": 2.0}},
    }
    spec, obstacles = domain_from_config(cfg)
    assert spec.R == 4.0
    assert obstacles.kind == "constant"
