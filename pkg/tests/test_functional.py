import math

import numpy as np
import pytest

from chargedrop.equilibrium import ball_energy
from chargedrop.functional import (
    almost_minimality_probe,
    default_lambda,
    dimple_competitor,
    interaction,
    load_calibration,
    relaxed_ball_energy,
    rieszbis_bounds_check,
    second_almost_minimality_probe,
    splitting_bound_check,
    symmetric_difference_radius,
    total_energy,
)
from chargedrop.geometry import Ball, GeneralizedSet, ShapeError, Square, perimeter
from chargedrop.riesz import RieszParams

P1, P05 = RieszParams(2, 1.0), RieszParams(2, 0.5)


class TestAssembly:
    def test_identity(self):
        E = total_energy(Ball(1.1), 0.7, P1, Lambda=3.0, n_cells=2000)
        pen = 3.0 * abs(math.pi * 1.21 - math.pi)
        assert E.volume_penalty == pytest.approx(pen, rel=1e-14)
        assert E.total == pytest.approx(E.perimeter + 0.49 * E.interaction + pen, rel=1e-14)

    def test_disk_close_to_closed_form(self):
        E = total_energy(Ball(), 1.0, P1, n_cells=8000)
        assert E.interaction == pytest.approx(ball_energy(1.0, P1), rel=0.01)
        assert E.perimeter == pytest.approx(2 * math.pi)

    def test_far_pair_halves(self):
        one = interaction(Ball(), P1, n_cells=2000)
        two = interaction(GeneralizedSet((Ball(), Ball(center=np.array([10.0, 0.0])))), P1, n_cells=2000)
        assert two == pytest.approx(one / 2, rel=1e-12)

    def test_deleting_component_raises_energy(self):
        g = GeneralizedSet((Ball(), Ball(0.5), Ball(0.3)))
        full = interaction(g, P05, n_cells=1500)
        for k in range(3):
            rest = GeneralizedSet(tuple(c for i, c in enumerate(g.components) if i != k))
            assert interaction(rest, P05, n_cells=1500) > full

    def test_translation_invariant(self):
        a = interaction(Square(1.0), P1, n_cells=1500)
        b = interaction(Square(1.0, center=np.array([0.37, -2.1])), P1, n_cells=1500)
        assert a == b

    def test_eps_monotone(self):
        vals = [total_energy(Ball(), 1.0, P1, eps=e, n_cells=1500).interaction for e in (0.0, 0.01, 0.1, 1.0)]
        assert np.all(np.diff(vals) > 0)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            total_energy(Ball(), 0.0, P1)
        with pytest.raises(ValueError):
            total_energy(Ball(), 1.0, P1, Lambda=-1)

    def test_json(self):
        import json

        E = total_energy(Ball(), 1.0, P1, n_cells=1000)
        assert json.loads(E.to_json())["total"] == E.total


class TestRelaxation:
    @pytest.mark.parametrize("Q", [0.1, 1.0])
    def test_unit_ball_optimal_among_dilates(self, Q):
        # the penalty keeps the volume at the ball's
        I = ball_energy(1.0, P1)
        L = default_lambda(Q)
        t = np.linspace(0.8, 1.2, 401)
        vals = [relaxed_ball_energy(s, Q, P1, I, L) for s in t]
        assert t[int(np.argmin(vals))] == pytest.approx(1.0)

    def test_matches_total_energy(self):
        I = interaction(Ball(), P1, n_cells=3000)
        E = total_energy(Ball(1.05), 0.5, P1, Lambda=7.0, n_cells=3000)
        assert relaxed_ball_energy(1.05, 0.5, P1, I, 7.0) == pytest.approx(E.total, rel=1e-3)


class TestSplitting:
    def test_far_disks(self):
        rec = splitting_bound_check(Ball(0.5), Ball(0.5, center=np.array([10.0, 0.0])), P1, eps=0.1)
        assert rec.holds and rec.slack > 0

    def test_tiny_E(self):
        rec = splitting_bound_check(Ball(0.1), Ball(1.0, center=np.array([3.0, 0.0])), P1, eps=0.1, h=0.015)
        assert rec.holds

    def test_random_pairs(self):
        rng = np.random.default_rng(30)
        for _ in range(6):
            r1, r2 = rng.uniform(0.3, 1.0, 2)
            gap = rng.uniform(0.5, 3.0)
            E = Ball(float(r1))
            F = Ball(float(r2), center=np.array([r1 + r2 + gap, 0.0]))
            for eps in (0.01, 0.1, 1.0):
                assert splitting_bound_check(E, F, P05, eps, n_cells=600).holds

    def test_overlap_rejected(self):
        with pytest.raises(ShapeError):
            splitting_bound_check(Ball(), Ball(center=np.array([1.5, 0.0])), P1, eps=0.1)

    def test_eps_positive(self):
        with pytest.raises(ValueError):
            splitting_bound_check(Ball(), Ball(center=np.array([5.0, 0.0])), P1, eps=0.0)


class TestSandwich:
    @pytest.mark.parametrize("shape", [Ball(), Square(2.0)])
    def test_bounds(self, shape):
        rec = rieszbis_bounds_check(shape, P1, 0.1, n_cells=2000, mc_samples=200_000)
        assert rec.holds and rec.lower < rec.energy < rec.upper + 4 * rec.c_stderr

    def test_generalized(self):
        g = GeneralizedSet((Ball(0.7), Square(0.8)))
        assert rieszbis_bounds_check(g, P05, 1.0, n_cells=1500, mc_samples=200_000).holds


class TestAlmostMinimality:
    def test_dimple_is_local(self):
        for r in (0.4, 0.1, 0.02):
            F = dimple_competitor(r)
            assert symmetric_difference_radius(F) <= r
            assert F.w1inf_norm() <= 0.5

    def test_identical_competitor(self):
        rec = almost_minimality_probe(Ball(), P1, 0.1, 0.2, 1.0)
        assert rec.perimeter_gain == 0 and rec.holds

    def test_inward_dimple_gains_nothing(self):
        # pushing the boundary in increases perimeter: the gain is negative
        rec = almost_minimality_probe(dimple_competitor(0.2, depth=0.01), P1, 0.1, 0.2, 0.0)
        assert rec.perimeter_gain < 0 and rec.holds

    def test_r_sweep_with_pinned_constant(self):
        C = load_calibration()["almost_min_constant"]
        for r in np.geomspace(0.01, 0.5, 8):
            assert almost_minimality_probe(dimple_competitor(float(r)), P1, 0.1, float(r), C).holds

    def test_rejects_nonlocal_competitor(self):
        with pytest.raises(ShapeError):
            almost_minimality_probe(dimple_competitor(0.4), P1, 0.1, 0.1, 1.0)

    def test_second_probe_at_zero_charge(self):
        F = dimple_competitor(0.1)
        rec = second_almost_minimality_probe(F, P1, 0.0, 0.1, 1.0)
        assert rec.certificate == pytest.approx(0.1 ** 2)

    def test_second_probe_pinned(self):
        C = load_calibration()["second_almost_min_constant"]
        for r in (0.05, 0.1, 0.3):
            assert second_almost_minimality_probe(dimple_competitor(r), P1, 0.1, r, C).holds

    def test_second_probe_alpha(self):
        with pytest.raises(ValueError):
            second_almost_minimality_probe(Ball(), P05, 0.1, 0.1, 1.0)
