import math

import numpy as np
import pytest

from insulopt.domain import DomainSpec, build_grid, make_obstacles, rasterize
from insulopt.energy import (
    PenaltyParams,
    ScalarField,
    descent_direction,
    dirichlet_energy,
    f_eps,
    inner_product,
    penalized_energy,
    penalized_energy_smoothed,
    positivity_volume,
    smoothed_volume,
)
from insulopt.oracle import radial_solution


@pytest.fixture(scope="module")
def radial_setup():
    spec = DomainSpec(shape="disk", params={"a": 1.0}, R=4.0, mu=3 * math.pi)
    grid = build_grid(spec, 257)
    masks = rasterize(spec, grid)
    p = PenaltyParams.for_scale(eps=0.1, mu=3 * math.pi, sup_phi=1.0)
    return spec, grid, masks, p


def params(eps=0.1, mu=3.0, tau=1e-3, thr=1e-8):
    return PenaltyParams(eps=eps, mu=mu, tau=tau, pos_threshold=thr)


class TestFEps:
    def test_zero_at_target(self):
        assert f_eps(3.0, params(mu=3.0)) == 0.0

    def test_lower_branch(self):
        assert f_eps(2.0, params(eps=0.1, mu=3.0)) == pytest.approx(-0.1)

    def test_upper_branch(self):
        assert f_eps(3.5, params(eps=0.1, mu=3.0)) == pytest.approx(5.0)

    def test_continuous_monotone_and_slope_bounded(self):
        p = params(eps=0.3, mu=2.0)
        rng = np.random.default_rng(7)
        ts = np.sort(rng.uniform(0.0, 5.0, size=200))
        vals = [f_eps(t, p) for t in ts]
        for (t1, v1), (t2, v2) in zip(zip(ts, vals), zip(ts[1:], vals[1:])):
            dv, dt = v2 - v1, t2 - t1
            assert dv >= p.eps * dt - 1e-12
            assert dv <= dt / p.eps + 1e-12
        # continuity across the kink
        assert abs(f_eps(2.0 - 1e-12, p) - f_eps(2.0 + 1e-12, p)) < 1e-11


class TestDirichletEnergy:
    def test_zero_field(self):
        spec = DomainSpec(shape="disk", params={"a": 1.0}, R=4.0, mu=1.0)
        grid = build_grid(spec, 33)
        assert dirichlet_energy(ScalarField.zeros(grid)) == 0.0

    def test_1d_hat(self):
        from insulopt.domain import Grid

        grid = Grid(nx=3, ny=1, h=1.0, origin=(0.0, 0.0))
        u = ScalarField(grid, np.array([[0.0], [1.0], [0.0]]))
        assert dirichlet_energy(u) == pytest.approx(2.0)

    def test_radial_closed_form(self, radial_setup):
        spec, grid, masks, p = radial_setup
        sol = radial_solution(1.0, 1.0, 3 * math.pi)
        u = sol.field_on(grid)
        assert dirichlet_energy(u) == pytest.approx(sol.energy, rel=0.02)

    def test_convexity_on_random_fields(self, radial_setup):
        _, grid, _, _ = radial_setup
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = ScalarField(grid, rng.normal(size=grid.shape))
            b = ScalarField(grid, rng.normal(size=grid.shape))
            t = rng.uniform()
            mix = ScalarField(grid, t * a.values + (1 - t) * b.values)
            lhs = dirichlet_energy(mix)
            rhs = t * dirichlet_energy(a) + (1 - t) * dirichlet_energy(b)
            assert lhs <= rhs + 1e-10


class TestVolumes:
    def test_zero_field(self, radial_setup):
        _, grid, masks, p = radial_setup
        u = ScalarField.zeros(grid)
        assert positivity_volume(u, masks, p) == 0.0
        assert smoothed_volume(u, masks, p) == 0.0

    def test_counts_omega_nodes(self, radial_setup):
        _, grid, masks, p = radial_setup
        v = np.zeros(grid.shape)
        ii, jj = np.nonzero(masks.omega)
        v[ii[:17], jj[:17]] = 1.0
        # some positive nodes inside D must not count
        v[masks.inside_D] = 1.0
        u = ScalarField(grid, v)
        assert positivity_volume(u, masks, p) == pytest.approx(17 * grid.cell_volume)

    def test_ramp_saturates_at_tau(self, radial_setup):
        _, grid, masks, p = radial_setup
        v = np.zeros(grid.shape)
        ii, jj = np.nonzero(masks.omega)
        v[ii[0], jj[0]] = p.tau
        u = ScalarField(grid, v)
        assert smoothed_volume(u, masks, p) == pytest.approx(grid.cell_volume)

    def test_radial_smoothed_close_to_sharp(self, radial_setup):
        _, grid, masks, p = radial_setup
        sol = radial_solution(1.0, 1.0, 3 * math.pi)
        u = sol.field_on(grid)
        sharp = positivity_volume(u, masks, p)
        assert sharp == pytest.approx(3 * math.pi, rel=0.02)
        assert smoothed_volume(u, masks, p) == pytest.approx(sharp, rel=0.01)

    def test_smoothed_monotone_in_tau(self, radial_setup):
        _, grid, masks, p = radial_setup
        sol = radial_solution(1.0, 1.0, 3 * math.pi)
        u = sol.field_on(grid)
        taus = [1e-2, 5e-3, 1e-3, 1e-4]
        vols = [smoothed_volume(u, masks, p.with_tau(t)) for t in taus]
        assert all(b >= a - 1e-12 for a, b in zip(vols, vols[1:]))
        assert all(v <= positivity_volume(u, masks, p) + 1e-12 for v in vols)


class TestPenalizedEnergy:
    def test_zero_field_lower_branch(self, radial_setup):
        _, grid, masks, _ = radial_setup
        p = params(eps=0.1, mu=3 * math.pi)
        u = ScalarField.zeros(grid)
        assert penalized_energy(u, masks, p) == pytest.approx(-0.3 * math.pi)

    def test_radial_at_target_volume(self, radial_setup):
        _, grid, masks, p = radial_setup
        sol = radial_solution(1.0, 1.0, 3 * math.pi)
        u = sol.field_on(grid)
        vol = positivity_volume(u, masks, p)
        expected = dirichlet_energy(u) + f_eps(vol, p)
        assert penalized_energy(u, masks, p) == pytest.approx(expected)

    def test_oversized_support_pays(self, radial_setup):
        _, grid, masks, p = radial_setup
        v = np.zeros(grid.shape)
        v[masks.omega] = 0.5
        u = ScalarField(grid, v)
        assert penalized_energy(u, masks, p) > dirichlet_energy(u)


class TestDescentDirection:
    def test_zero_field_gives_zero(self, radial_setup):
        _, grid, masks, p = radial_setup
        g = descent_direction(ScalarField.zeros(grid), masks, p)
        assert np.all(g.values == 0.0)

    def test_zero_outside_ball(self, radial_setup):
        _, grid, masks, p = radial_setup
        rng = np.random.default_rng(0)
        u = ScalarField(grid, rng.uniform(0.2, 0.8, size=grid.shape))
        g = descent_direction(u, masks, p)
        assert np.all(g.values[masks.outside] == 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(self, radial_setup, seed):
        _, grid, masks, p0 = radial_setup
        rng = np.random.default_rng(seed)
        # smooth random field, values away from the ramp kinks at 0 and tau
        X, Y = grid.coords()
        base = 0.5 + 0.3 * np.sin(X) * np.cos(1.3 * Y)
        u = ScalarField(grid, base)
        p = PenaltyParams(eps=0.2, mu=3 * math.pi, tau=0.2, pos_threshold=1e-8)
        v = rng.normal(size=grid.shape)
        r = np.hypot(X, Y)
        v[r > 3.8] = 0.0  # keep the perturbation inside B_R
        vf = ScalarField(grid, v)
        g = descent_direction(u, masks, p)
        e = 1e-6
        up = ScalarField(grid, u.values + e * v)
        dn = ScalarField(grid, u.values - e * v)
        fd = (penalized_energy_smoothed(up, masks, p) - penalized_energy_smoothed(dn, masks, p)) / (2 * e)
        analytic = -inner_product(g, vf)
        assert fd == pytest.approx(analytic, rel=1e-6)

    def test_harmonic_interior_direction_small(self, radial_setup):
        _, grid, masks, p = radial_setup
        X, Y = grid.coords()
        u = ScalarField(grid, np.clip(1.0 + 0.1 * X, 0.5, None))  # linear, discrete-harmonic
        g = descent_direction(u, masks, p.with_tau(1e-4))
        interior = masks.omega.copy()
        interior[:2, :] = interior[-2:, :] = False
        interior[:, :2] = interior[:, -2:] = False
        # values >= 0.5 are far above tau so only the Laplacian term remains
        clipped = u.values <= 0.5
        sel = interior & ~clipped
        sel[1:, :] &= ~clipped[:-1, :]
        sel[:-1, :] &= ~clipped[1:, :]
        sel[:, 1:] &= ~clipped[:, :-1]
        sel[:, :-1] &= ~clipped[:, 1:]
        assert np.max(np.abs(g.values[sel])) < 1e-9


class TestSerialization:
    def test_binary_roundtrip(self, radial_setup, tmp_path):
        _, grid, _, _ = radial_setup
        rng = np.random.default_rng(5)
        u = ScalarField(grid, rng.normal(size=grid.shape))
        path = tmp_path / "u.bin"
        u.write_binary(path)
        back = ScalarField.read_binary(path)
        assert back.grid.nx == grid.nx and back.grid.ny == grid.ny
        assert back.grid.h == pytest.approx(grid.h)
        np.testing.assert_array_equal(back.values, u.values)
        assert path.read_bytes()[:4] == b"OFGD"

    def test_csv_header_and_rows(self, tmp_path):
        from insulopt.domain import Grid

        grid = Grid(nx=3, ny=3, h=0.5, origin=(0.0, 0.0))
        u = ScalarField(grid, np.arange(9.0).reshape(3, 3))
        path = tmp_path / "u.csv"
        u.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x,y,u"
        assert len(lines) == 10
        x, y, val = lines[1].split(",")
        assert float(x) == 0.0 and float(y) == 0.0 and float(val) == 0.0

    def test_nonfinite_rejected(self):
        from insulopt.domain import Grid

        grid = Grid(nx=3, ny=3, h=0.5, origin=(0.0, 0.0))
        bad = np.zeros((3, 3))
        bad[1, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            ScalarField(grid, bad)
