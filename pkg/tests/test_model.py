import numpy as np
import pytest

from mflab.grids import GridDensity, GridSpec
from mflab.model import (
    EmpiricalMeasure,
    Line,
    ModelSpec,
    Torus,
    cosine_potential,
    drift,
    gaussian_bump_potential,
    gibbs_steady_state,
    tabulated_potential,
)


def overdamped_line(kappa=0.0, a=1.0):
    return ModelSpec("overdamped", Line(), kappa=kappa,
                     interaction=gaussian_bump_potential(1.0, 1.0), a=a)


def langevin_line(kappa=0.0, a=1.0, beta=1.0):
    return ModelSpec("langevin", Line(), kappa=kappa,
                     interaction=gaussian_bump_potential(1.0, 1.0), a=a, beta=beta)


def torus_model(kappa, dynamics="overdamped", beta=None, w=(1.0,)):
    return ModelSpec(dynamics, Torus(2 * np.pi), kappa=kappa,
                     interaction=cosine_potential(*w), beta=beta)


class TestPotentials:
    def test_cosine_even(self):
        pot = cosine_potential(1.0, 0.3)
        x = np.linspace(-3, 3, 11)
        np.testing.assert_allclose(pot.w(x, 2 * np.pi), pot.w(-x, 2 * np.pi),
                                   atol=1e-14)

    @pytest.mark.parametrize("pot,period", [
        (cosine_potential(1.0, -0.2, 0.05), 2 * np.pi),
        (gaussian_bump_potential(0.7, 0.5), None),
        (gaussian_bump_potential(0.7, 0.5), 2 * np.pi),
    ])
    def test_gradient_consistency(self, pot, period):
        # centered difference of W matches grad W to O(h^2)
        h = 1e-5
        x = np.linspace(-2.5, 2.5, 17)
        fd = (pot.w(x + h, period) - pot.w(x - h, period)) / (2 * h)
        np.testing.assert_allclose(fd, pot.grad_w(x, period), atol=1e-8)

    def test_tabulated_gradient_consistency(self):
        L = 2 * np.pi
        xs = np.arange(256) * L / 256
        pot = tabulated_potential(np.cos(xs) + 0.2 * np.cos(2 * xs), period=L)
        h = 1e-3
        x = np.linspace(0.3, 5.9, 13)
        fd = (pot.w(x + h) - pot.w(x - h)) / (2 * h)
        np.testing.assert_allclose(fd, pot.grad_w(x), atol=1e-6)

    def test_tabulated_rejects_odd(self):
        with pytest.raises(ValueError):
            tabulated_potential(np.array([0.0, 1.0, 2.0, 3.0]), period=None)

    def test_h_stable_flag(self):
        assert cosine_potential(1.0, 0.5).is_h_stable(2 * np.pi)
        assert not cosine_potential(1.0, -0.5).is_h_stable(2 * np.pi)

    def test_fourier_coefficients(self):
        pot = cosine_potential(1.0, 0.0, 0.25)
        assert pot.fourier_coefficient(1, 2 * np.pi) == pytest.approx(0.5)
        assert pot.fourier_coefficient(3, 2 * np.pi) == pytest.approx(0.125)
        assert pot.fourier_coefficient(2, 2 * np.pi) == 0.0
        # quadrature route agrees for the bump potential
        bump = gaussian_bump_potential(1.0, 0.5)
        c1 = bump.fourier_coefficient(1, 2 * np.pi)
        x = np.arange(8192) * 2 * np.pi / 8192
        ref = np.mean(bump.w(x, 2 * np.pi) * np.cos(x))
        assert c1 == pytest.approx(ref, abs=1e-8)


class TestModelSpec:
    def test_line_needs_confinement(self):
        with pytest.raises(ValueError):
            ModelSpec("overdamped", Line(), kappa=0.0,
                      interaction=cosine_potential(1.0), a=0.0)

    def test_torus_rejects_confinement(self):
        with pytest.raises(ValueError):
            ModelSpec("overdamped", Torus(), kappa=0.0,
                      interaction=cosine_potential(1.0), a=1.0)

    def test_langevin_needs_beta(self):
        with pytest.raises(ValueError):
            ModelSpec("langevin", Torus(), kappa=0.1,
                      interaction=cosine_potential(1.0))

    def test_overdamped_beta_default(self):
        spec = torus_model(0.1)
        assert spec.beta == 2.0

    def test_gibbs_guard(self):
        spec = torus_model(0.6, beta=1.0)  # kappa*beta*sup|W| = 0.6 < 1 passes
        spec.check_gibbs_guard()
        bad = torus_model(1.2, beta=1.0)
        with pytest.raises(ValueError):
            bad.check_gibbs_guard()

    def test_one_dimensional_only(self):
        with pytest.raises(ValueError):
            ModelSpec("overdamped", Line(), kappa=0.0,
                      interaction=cosine_potential(1.0), a=1.0, dim=2)


class TestDrift:
    def test_pure_confinement(self):
        spec = overdamped_line(kappa=0.0, a=1.0)
        mu = EmpiricalMeasure(np.array([0.0]))
        assert drift(np.array(2.0), mu, spec) == pytest.approx(-2.0)

    def test_langevin_friction(self):
        spec = langevin_line(kappa=0.0, a=1.0, beta=2.0)
        mu = EmpiricalMeasure(np.array([0.0]))
        dx, dv = drift((np.array(1.0), np.array(3.0)), mu, spec)
        assert dx == pytest.approx(3.0)
        assert dv == pytest.approx(-3.0 - 1.0)

    def test_point_mass_interaction(self):
        # W = cos on the 2pi torus, mu = delta_0: force at pi/2 is sin(pi/2)
        spec = torus_model(1.0)
        mu = EmpiricalMeasure(np.array([0.0]), period=2 * np.pi)
        assert drift(np.array(np.pi / 2), mu, spec) == pytest.approx(1.0, rel=1e-12)

    def test_action_reaction_antisymmetry(self):
        # force of particle j on i is minus force of i on j
        spec = torus_model(0.7)
        x1, x2 = 0.3, 2.1
        f_on_1 = -spec.kappa * EmpiricalMeasure(
            np.array([x2]), 2 * np.pi).grad_w_conv(spec.interaction, x1)
        f_on_2 = -spec.kappa * EmpiricalMeasure(
            np.array([x1]), 2 * np.pi).grad_w_conv(spec.interaction, x2)
        assert f_on_1 == pytest.approx(-f_on_2, rel=1e-12)

    def test_shape_mismatch(self):
        spec = langevin_line()
        with pytest.raises(ValueError):
            drift((np.zeros(3), np.zeros(4)), EmpiricalMeasure(np.zeros(1)), spec)
        with pytest.raises(ValueError):
            drift(np.zeros(3), EmpiricalMeasure(np.zeros(1)), spec)


class TestEmpiricalMeasure:
    def test_trig_sum_matches_direct(self):
        rng = np.random.default_rng(0)
        pos = rng.uniform(0, 2 * np.pi, size=40)
        pot = cosine_potential(1.0, 0.3, -0.1)
        mu = EmpiricalMeasure(pos, period=2 * np.pi)
        x = rng.uniform(0, 2 * np.pi, size=9)
        fast = mu.grad_w_conv(pot, x)
        direct = pot.grad_w(np.subtract.outer(x, pos), 2 * np.pi).mean(axis=1)
        np.testing.assert_allclose(fast, direct, atol=1e-13)


class TestGibbsSteadyState:
    def test_kappa0_line_langevin(self):
        spec = langevin_line(kappa=0.0, a=1.0, beta=1.0)
        grid = GridSpec(Line(), G=256, G_v=128, v_max=7.0, x_max=8.0)
        m = gibbs_steady_state(spec, grid, tol=1e-12)
        x, v = grid.x(), grid.v()
        rho_x = m.values.sum(axis=1) * grid.dv
        rho_v = m.values.sum(axis=0) * grid.dx
        var_x = np.sum(x ** 2 * rho_x) * grid.dx
        var_v = np.sum(v ** 2 * rho_v) * grid.dv
        assert var_x == pytest.approx(1.0, abs=1e-6)
        assert var_v == pytest.approx(1.0, abs=1e-6)

    def test_kappa0_torus_uniform(self):
        spec = torus_model(0.0)
        grid = GridSpec(Torus(2 * np.pi), G=128)
        m = gibbs_steady_state(spec, grid)
        np.testing.assert_allclose(m.values, 1.0 / (2 * np.pi), atol=1e-12)

    def test_self_consistency_residual(self):
        spec = torus_model(0.2, beta=1.0)
        grid = GridSpec(Torus(2 * np.pi), G=256)
        m = gibbs_steady_state(spec, grid, tol=1e-11)
        x = grid.x()
        kernel = spec.interaction.w(np.subtract.outer(x, x), 2 * np.pi)
        energy = spec.kappa * (kernel @ m.values) * grid.dx
        target = np.exp(-spec.gibbs_beta() * energy)
        target /= target.sum() * grid.dx
        assert np.max(np.abs(m.values - target)) < 1e-10

    def test_mass_and_positivity(self):
        spec = torus_model(0.3, beta=1.0)
        grid = GridSpec(Torus(2 * np.pi), G=128)
        m = gibbs_steady_state(spec, grid)
        assert m.mass == pytest.approx(1.0, abs=1e-12)
        assert m.values.min() > 0

    def test_guard_refuses(self):
        spec = torus_model(1.5, beta=1.0)
        grid = GridSpec(Torus(2 * np.pi), G=64)
        with pytest.raises(ValueError):
            gibbs_steady_state(spec, grid)


class TestGrids:
    def test_power_of_two(self):
        with pytest.raises(ValueError):
            GridSpec(Torus(), G=100)

    def test_density_mass_validation(self):
        grid = GridSpec(Torus(2 * np.pi), G=64)
        with pytest.raises(ValueError):
            GridDensity(np.ones(64), grid)  # mass 2 pi, not 1
        GridDensity(np.full(64, 1.0 / (2 * np.pi)), grid)

    def test_signed_zero_mass(self):
        grid = GridSpec(Torus(2 * np.pi), G=64)
        vals = np.sin(grid.x())
        GridDensity(vals, grid, signed=True)
        with pytest.raises(ValueError):
            GridDensity(vals + 0.1, grid, signed=True)

    def test_mollified_dirac_mass(self):
        from mflab.grids import mollified_dirac
        for geom, kwargs in [(Torus(2 * np.pi), {}), (Line(), {"x_max": 8.0})]:
            grid = GridSpec(geom, G=128, **kwargs)
            vals = mollified_dirac(grid, 1.0)
            assert vals.sum() * grid.dx == pytest.approx(1.0, rel=1e-12)
            assert vals.min() >= 0

    def test_neg_sobolev_norm(self):
        from mflab.grids import spectral_neg_sobolev
        grid = GridSpec(Torus(2 * np.pi), G=256)
        x = grid.x()
        # single mode cos(3x): ||f||_{H^-k} = sqrt(pi) (1+9)^(-k/2)
        f = np.cos(3 * x)
        for k in (0, 1, 2):
            expect = np.sqrt(np.pi) * 10.0 ** (-k / 2)
            assert spectral_neg_sobolev(f, grid, k) == pytest.approx(expect, rel=1e-10)
        # k = 0 reduces to the L^2 norm
        g = np.cos(x) + 0.3 * np.sin(4 * x)
        l2 = np.sqrt(np.sum(g ** 2) * grid.dx)
        assert spectral_neg_sobolev(g, grid, 0) == pytest.approx(l2, rel=1e-10)
