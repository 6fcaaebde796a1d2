import math

import numpy as np
import pytest
from scipy import integrate

from chargedrop.equilibrium import solve_equilibrium
from chargedrop.functional import load_calibration
from chargedrop.geometry import FourierShape, ShapeError, rasterize, random_shape, spacing_for_cells, volume
from chargedrop.perturbation import (
    BallSolveCache,
    ball_density_measure,
    ball_reference_cells,
    f_theta,
    linearization_gap,
    linearization_mass_drift,
    local_lp_mass,
    mapped_set,
    mu_ball_integrability_exponent,
    psi,
    pullback_measure,
    pushforward_measure,
    random_ball_pairs,
    shape_equilibrium,
    sphere_distance_ratio,
    square_identity_residual,
    stability_gap,
    taylor_kernel_terms,
    tmap,
    tmap_energy,
    zeta_bound_constant,
)
from chargedrop.riesz import RieszParams

P1, P05 = RieszParams(2, 1.0), RieszParams(2, 0.5)


def scaled(shape: FourierShape, t: float) -> FourierShape:
    return FourierShape(t * shape.a0, t * shape.a, t * shape.b)


def f_theta_oracle(theta, a, N=2):
    f = lambda s, r: (r * s) ** (N - 1) * ((1 - r) * (1 - s)) ** (-a / 2) * ((r - s) ** 2 + r * s * theta ** 2) ** (-(N - a) / 2)
    return integrate.dblquad(f, 0, 1, 0, 1, epsabs=1e-11, epsrel=1e-10)[0]


class TestTmap:
    def test_identity_at_zero(self):
        x, _ = random_ball_pairs(np.random.default_rng(0), 100)
        assert np.array_equal(tmap(x, FourierShape()), x)

    def test_boundary_lands_on_shape(self):
        s = FourierShape(0.0, [0.0, 0.03], [0.0, 0.0, 0.01])
        th = np.linspace(0, 2 * np.pi, 50)
        u = np.stack([np.cos(th), np.sin(th)], axis=1)
        assert np.allclose(tmap(u, s), s.boundary(th), atol=1e-14)

    def test_origin_fixed(self):
        assert np.allclose(tmap(np.zeros(2), FourierShape(0.0, [0.0, 0.05])), 0)

    def test_outside_rejected(self):
        with pytest.raises(ValueError):
            tmap(np.array([1.5, 0.0]), FourierShape())


class TestSquareIdentity:
    def test_many_triples(self):
        rng = np.random.default_rng(1)
        x, y = random_ball_pairs(rng, 100_000)
        for _ in range(5):
            shape = random_shape(rng, 6, 0.1)
            r = square_identity_residual(x, y, shape)
            assert np.all(np.abs(r) <= 1e-12 * np.sum((x - y) ** 2, axis=1))

    def test_psi_zero_for_constant(self):
        x, y = random_ball_pairs(np.random.default_rng(2), 1000)
        assert np.all(psi(x, y, FourierShape(0.05)) == 0)

    def test_coincident_points(self):
        with pytest.raises(ValueError):
            psi(np.array([[0.1, 0.2]]), np.array([[0.1, 0.2]]), FourierShape())


class TestRemainder:
    def test_zero_at_ball(self):
        x, y = random_ball_pairs(np.random.default_rng(3), 1000)
        smp = taylor_kernel_terms(x, y, FourierShape(), P1)
        assert np.all(smp.zeta == 0) and zeta_bound_constant(smp) == 0.0

    @pytest.mark.parametrize("params", [P05, P1])
    def test_halving_ratio(self, params):
        rng = np.random.default_rng(4)
        base = random_shape(rng, 6, 0.08)
        x, y = random_ball_pairs(rng, 100_000)
        m = [np.max(np.abs(taylor_kernel_terms(x, y, scaled(base, d / 0.08), params).zeta)) for d in (0.08, 0.04, 0.02)]
        for a, b in zip(m, m[1:]):
            assert 3.5 <= a / b <= 4.5

    def test_pinned_constant(self):
        rng = np.random.default_rng(5)
        C = load_calibration()["zeta_constant"]
        shape = random_shape(rng, 6, 0.05)
        x, y = random_ball_pairs(rng, 10_000)
        assert zeta_bound_constant(taylor_kernel_terms(x, y, shape, P1)) <= C

    def test_cap(self):
        x, y = random_ball_pairs(np.random.default_rng(6), 10)
        with pytest.raises(ShapeError):
            taylor_kernel_terms(x, y, FourierShape(0.0, [0.0, 0.1]), P1)


def test_sphere_distance_ratio():
    x, y = random_ball_pairs(np.random.default_rng(7), 100_000)
    assert np.max(sphere_distance_ratio(x, y)) <= 2.0


class TestFTheta:
    @pytest.mark.parametrize("alpha", [0.5, 1.0])
    @pytest.mark.parametrize("theta", [0.3, 1.0, 2.0])
    def test_against_dblquad(self, alpha, theta):
        assert f_theta(theta, RieszParams(2, alpha)) == pytest.approx(f_theta_oracle(theta, alpha), rel=1e-6)

    @pytest.mark.parametrize("alpha", [0.5, 1.0])
    def test_refinement(self, alpha):
        for t in (1e-3, 0.03, 1.0):
            a = f_theta(t, RieszParams(2, alpha))
            b = f_theta(t, RieszParams(2, alpha), order=24)
            assert abs(a - b) / b < 5e-3

    def test_monotone(self):
        grid = np.geomspace(1e-3, 2, 10)
        v = [f_theta(t, P05) for t in grid]
        assert np.all(np.diff(v) < 0)

    def test_bounded_at_half(self):
        grid = np.geomspace(1e-3, 2, 50)
        v = np.array([t ** 0.5 * f_theta(t, P05) for t in grid])
        assert v.max() / np.median(v) <= 3.0

    def test_bad_theta(self):
        with pytest.raises(ValueError):
            f_theta(0.0, P1)


class TestMeasures:
    def test_pushforward_mass(self):
        cells = ball_reference_cells(1500, P1)
        g = ball_density_measure(cells, P1)
        push = pushforward_measure(random_shape(np.random.default_rng(8), 4, 0.05), g)
        assert push.mass == pytest.approx(1.0, abs=1e-12)

    def test_identity_map(self):
        cells = ball_reference_cells(1500, P1)
        g = ball_density_measure(cells, P1)
        push = pushforward_measure(FourierShape(), g)
        assert np.allclose(push.density, g.density, rtol=1e-14)
        back = pullback_measure(cells, push)
        assert np.allclose(back.density, g.density, rtol=1e-14)

    def test_mapped_volume(self):
        shape = random_shape(np.random.default_rng(9), 4, 0.05)
        cells = ball_reference_cells(3000, P1)
        assert mapped_set(shape, cells).total_volume == pytest.approx(volume(shape), rel=1e-3)

    @pytest.mark.parametrize("params", [P05, P1])
    def test_pushforward_energy_close_to_solve(self, params):
        shape = FourierShape(0.0, [0.0, 0.05 / 3])
        cells = ball_reference_cells(8000, params)
        push_energy = tmap_energy(shape, ball_density_measure(cells, params), params)
        d = rasterize(shape, spacing_for_cells(shape, 20000))
        solve = solve_equilibrium(d, params, near_field=3)
        assert abs(push_energy - solve.energy) / solve.energy <= 0.02


class TestLinearization:
    def test_zero_at_ball(self):
        cells = ball_reference_cells(1500, P1)
        g = ball_density_measure(cells, P1)
        gap, semi = linearization_gap(FourierShape(), P1, g)
        assert gap == pytest.approx(0.0, abs=1e-12) and semi == 0.0

    def test_controlled_by_seminorm(self):
        # at 1500 cells the gap carries a discretization floor linear in the amplitude,
        # so the ratio creeps up as the shape shrinks but stays small
        cells = ball_reference_cells(1500, P1)
        g = ball_density_measure(cells, P1)
        rng = np.random.default_rng(10)
        for _ in range(4):
            base = random_shape(rng, 4, 0.08)
            for t in (1.0, 0.5, 0.25, 0.125):
                gap, semi = linearization_gap(scaled(base, t), P1, g)
                assert gap <= 0.05 * semi

    def test_ratio_bounded(self):
        cells = ball_reference_cells(1500, P05)
        g = ball_density_measure(cells, P05)
        rng = np.random.default_rng(11)
        ratios = []
        for _ in range(10):
            gap, semi = linearization_gap(random_shape(rng, 4, 0.03), P05, g)
            ratios.append(gap / semi)
        assert max(ratios) < 10 * np.median(ratios)

    def test_mass_drift_second_order(self):
        cells = ball_reference_cells(1500, P1)
        g = ball_density_measure(cells, P1)
        base = random_shape(np.random.default_rng(12), 4, 0.04)
        d = [abs(linearization_mass_drift(scaled(base, t), P1, g)) for t in (1.0, 0.5)]
        assert d[1] < d[0]


class TestStability:
    def test_ball_gap_zero(self):
        rec = stability_gap(FourierShape(), P1)
        assert rec.dI == pytest.approx(0.0, abs=1e-12) and rec.dP == 0.0

    @pytest.mark.parametrize("params", [P05, P1])
    def test_positive_and_pinned(self, params):
        rng = np.random.default_rng(13)
        cache = BallSolveCache()
        ceiling = load_calibration()["stability_ratio_ceiling"][str(params.alpha)]
        for _ in range(5):
            rec = stability_gap(random_shape(rng, 3, float(rng.uniform(0.01, 0.05))), params, cache=cache)
            assert rec.dP > 0 and 0 < rec.ratio <= ceiling

    def test_requires_normalized(self):
        with pytest.raises(ShapeError):
            stability_gap(FourierShape(0.02), P1)

    def test_same_cells_as_ball(self):
        cache = BallSolveCache()
        ball, shape = shape_equilibrium(random_shape(np.random.default_rng(14), 3, 0.03), P1, cache=cache)
        assert len(ball.density) == len(shape.density)


class TestIntegrability:
    @pytest.mark.parametrize("alpha, slope", [(1.0, 2.0), (0.5, 2.5)])
    def test_slope(self, alpha, slope):
        assert mu_ball_integrability_exponent(RieszParams(2, alpha)) == pytest.approx(slope, abs=0.1)

    def test_mass_increasing(self):
        m = [local_lp_mass(r, P1) for r in (0.01, 0.1, 0.5)]
        assert m[0] < m[1] < m[2]

    def test_bad_point(self):
        with pytest.raises(ValueError):
            mu_ball_integrability_exponent(P1, x_on_boundary=(0.5, 0.0))
