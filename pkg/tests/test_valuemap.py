"""Bayesian value map, cone masks and UCB scoring."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from goalnav.geometry import InvalidParameterError, Pose
from goalnav.valuemap import (
    ConeMask,
    ValueMap,
    bayes_update,
    build_cone_mask,
    fuse_value_maps,
    normalize_values,
    ucb_score,
)
from goalnav.sim.scenario import validate

from conftest import box_walls, scenario


def _full(shape, v=1.0):
    return ConeMask(np.full(shape, v))


class TestBayes:
    def test_full_trust(self):
        vm = bayes_update(ValueMap.fresh((3, 3)), 1.0, _full((3, 3)))
        np.testing.assert_allclose(vm.mu, 1.0)
        np.testing.assert_allclose(vm.sigma2, 0.0)

    def test_half_mask(self):
        vm = bayes_update(ValueMap.fresh((2, 2)), 0.8, _full((2, 2), 0.5))
        # (0.5 * 0.5 + 0.5 * 0.8 * 0.5) / (0.5 + 0.5)
        np.testing.assert_allclose(vm.mu, 0.45)
        np.testing.assert_allclose(vm.sigma2, 0.25)

    def test_zero_mask_no_change(self):
        vm = ValueMap.fresh((4, 4))
        out = bayes_update(vm, 0.9, ConeMask(np.zeros((4, 4))))
        np.testing.assert_array_equal(out.mu, vm.mu)
        np.testing.assert_array_equal(out.sigma2, vm.sigma2)

    def test_only_masked_cells_change(self):
        m = np.zeros((4, 4))
        m[1, 2] = 0.7
        out = bayes_update(ValueMap.fresh((4, 4)), 0.9, ConeMask(m))
        changed = (out.mu != 0.5) | (out.sigma2 != 0.5)
        assert changed.sum() == 1 and changed[1, 2]

    @pytest.mark.parametrize("c", [-0.1, 1.1, float("nan")])
    def test_bad_confidence(self, c):
        with pytest.raises(InvalidParameterError):
            bayes_update(ValueMap.fresh((2, 2)), c, _full((2, 2)))

    def test_collapsed_prior_reobserved(self):
        vm = bayes_update(ValueMap.fresh((1, 1)), 1.0, _full((1, 1)))
        vm = bayes_update(vm, 0.2, _full((1, 1)))
        assert vm.mu[0, 0] == pytest.approx(0.2)
        assert np.isfinite(vm.sigma2).all()

    @pytest.mark.parametrize("c", [0.0, 0.3, 0.77, 1.0])
    def test_converges(self, c):
        vm = ValueMap.fresh((2, 2))
        prev = vm.sigma2.copy()
        for _ in range(20):
            vm = bayes_update(vm, c, _full((2, 2)))
            assert (vm.sigma2 <= prev).all()
            prev = vm.sigma2.copy()
        assert np.abs(vm.mu - c).max() < 1e-3

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.floats(0, 1), hnp.arrays(np.float64, (3, 3), elements=st.floats(0, 1))),
                    min_size=1, max_size=25))
    def test_bounds_and_variance_monotone(self, updates):
        vm = ValueMap.fresh((3, 3))
        for c, m in updates:
            before = vm.sigma2.copy()
            vm = bayes_update(vm, c, ConeMask(m))
            assert (vm.mu >= 0).all() and (vm.mu <= 1).all()
            assert (vm.sigma2 >= 0).all()
            assert (vm.sigma2[m > 0] <= before[m > 0] + 1e-15).all()


class TestUcb:
    def test_fresh_prior(self):
        assert ucb_score(ValueMap.fresh((20, 20)), (10, 10), beta=1.7) == pytest.approx(0.5 + 1.7 * math.sqrt(0.5), abs=1e-12)
        assert ucb_score(ValueMap.fresh((20, 20)), (10, 10)) == pytest.approx(1.7021, abs=1e-4)

    def test_collapsed(self):
        vm = ValueMap(np.full((20, 20), 0.9), np.zeros((20, 20)))
        assert ucb_score(vm, (10, 10)) == pytest.approx(0.9)

    def test_median_over_disk(self, rng):
        mu = rng.random((30, 30))
        s2 = rng.random((30, 30)) * 0.5
        vm = ValueMap(mu, s2)
        c, r = (14.3, 16.0), 0.5 / 0.05
        ii, jj = np.mgrid[0:30, 0:30]
        disk = (ii - c[0]) ** 2 + (jj - c[1]) ** 2 <= r * r
        expect = np.median(mu[disk]) + 1.7 * math.sqrt(np.median(s2[disk]))
        assert ucb_score(vm, c) == pytest.approx(expect)

    def test_unobserved_beats_observed_low(self):
        vm = ValueMap.fresh((60, 60))
        m = np.zeros((60, 60))
        m[:30] = 1.0
        for _ in range(5):
            vm = bayes_update(vm, 0.1, ConeMask(m))
        assert ucb_score(vm, (45, 30)) > ucb_score(vm, (15, 30))

    @given(st.floats(0, 1), st.floats(0, 0.49), st.floats(0.001, 0.5))
    def test_optimism(self, mu, s_lo, ds):
        lo = ValueMap(np.full((10, 10), mu), np.full((10, 10), s_lo))
        hi = ValueMap(np.full((10, 10), mu), np.full((10, 10), s_lo + ds))
        assert ucb_score(hi, (5, 5)) > ucb_score(lo, (5, 5))

    def test_off_map_uses_prior(self):
        vm = ValueMap(np.zeros((10, 10)), np.zeros((10, 10)))
        assert ucb_score(vm, (500, 500)) == pytest.approx(0.5 + 1.7 * math.sqrt(0.5))

    def test_radius_positive(self):
        with pytest.raises(InvalidParameterError):
            ucb_score(ValueMap.fresh((4, 4)), (1, 1), radius_m=0)


class TestNormalize:
    def test_linear(self):
        assert normalize_values([1.0, 2.0, 3.0]) == [0.0, 0.5, 1.0]

    def test_degenerate(self):
        assert normalize_values([1.7021, 1.7021]) == [0.5, 0.5]
        assert normalize_values([3.0]) == [0.5]
        assert normalize_values([]) == []


class TestCone:
    def test_zero_depth(self, intr, ext):
        m = build_cone_mask(np.zeros(intr.shape), intr, ext, Pose(2, 2, 0), (80, 80))
        assert not m.m.any()

    def test_open_space_wedge(self, intr, ext):
        # constant 4 m depth, agent at the map centre facing +y
        depth = np.full(intr.shape, 4.0)
        pose = Pose(5.0, 5.0, 0.0)
        m = build_cone_mask(depth, intr, ext, pose, (200, 200), cell_size=0.05).m
        assert ((m >= 0) & (m <= 1)).all()
        cells = np.argwhere(m > 0)
        xy = (cells + 0.5) * 0.05 - [5.0, 5.0]
        ang = np.degrees(np.arctan2(xy[:, 0], xy[:, 1]))
        hfov = math.degrees(2 * math.atan((intr.c_x + 0.5) / intr.f_x))
        assert hfov == pytest.approx(42.0, abs=0.5)
        assert np.abs(ang).max() <= hfov / 2 + 0.5
        assert np.abs(ang).max() >= hfov / 2 - 2.0
        assert xy[:, 1].max() <= 4.0 + 1e-9
        # full-visibility core
        assert m[100, 140] == 1.0

    def test_truncated_by_wall(self, intr, ext):
        w = validate(scenario("wall", (6, 6), box_walls(0.5, 0.5, 5.5, 5.5) + [
            {"from": [0.5, 3.0], "to": [5.5, 3.0], "thickness": 0.1, "height": 2.5}],
            [{"label": "x", "aabb": [1, 1, 0, 1.3, 1.3, 0.5]}], [(3.0, 2.0, 0.0)]))
        pose = w.spawns[0]
        obs = w.render(pose, intr, ext)
        m = build_cone_mask(obs.depth, intr, ext, pose, w.shape).m
        iy = np.nonzero(m.any(axis=0))[0]
        assert (iy + 0.5).max() * 0.05 <= 3.0
        assert m[60, 55] > 0


def test_fusion_is_max_mu_min_sigma(rng):
    a = ValueMap(rng.random((5, 5)), rng.random((5, 5)))
    b = ValueMap(rng.random((5, 5)), rng.random((5, 5)))
    f = fuse_value_maps([a, b])
    np.testing.assert_array_equal(f.mu, np.maximum(a.mu, b.mu))
    np.testing.assert_array_equal(f.sigma2, np.minimum(a.sigma2, b.sigma2))
