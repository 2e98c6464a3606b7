"""
Tests for ivflow.integrator and ivflow.flow: trajectories and error grids.
"""

import numpy as np
import pytest

from ivflow.errors import DomainEscape, IntegrationFailure
from ivflow.flow import (
    Grid, advance, estimate_cost, field_error, fit_slope, flow_orbit,
    flowmap_error_grid, map_points, order_ladder,
)
from ivflow.integrator import IntegratorSettings, integrate, nominal_steps, \
    settings_problems
from ivflow.ivf import IvfField
from ivflow.maps import make_map, standard_map


TIGHT = IntegratorSettings(abs_tol=1e-13, rel_tol=1e-13)


class TestSettings:

    def test_defaults_are_valid(self):
        assert settings_problems({}) == []

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            IntegratorSettings(abs_tol=0.0)
        with pytest.raises(ValueError):
            IntegratorSettings(h_init=2.0, h_max=1.0)
        assert settings_problems({'max_steps': 0})
        assert settings_problems({'rel_tol': 'tight'})

    def test_from_dict_ignores_unknown_keys(self):
        settings = IntegratorSettings.from_dict({'abs_tol': 1e-9, 'x': 1})
        assert settings.abs_tol == 1e-9
        assert IntegratorSettings.from_dict(None) == IntegratorSettings()

    def test_nominal_steps(self):
        settings = IntegratorSettings(h_init=0.01, h_max=1.0)
        # 0.01 + 0.04 + remaining 0.05
        assert nominal_steps(settings, 0.1) == 3
        assert nominal_steps(settings, 0.0) == 0


class TestIntegrate:
    """Adaptive RKF78 on fields with known flows."""

    def test_exponential(self):
        x = np.array([[1.0], [-2.0]])
        y = integrate(lambda s: -s, x, 1.5, TIGHT)
        assert y == pytest.approx(x * np.exp(-1.5), rel=1e-11)

    def test_per_point_durations(self):
        x = np.ones((3, 1))
        t = np.array([0.0, 0.5, -0.5])
        y = integrate(lambda s: s, x, t, TIGHT)
        assert y[:, 0] == pytest.approx(np.exp(t), rel=1e-11)

    def test_zero_duration(self):
        x = np.array([0.3, 0.4])
        assert integrate(lambda s: s, x, 0.0, TIGHT) is not x
        assert np.array_equal(integrate(lambda s: s, x, 0.0, TIGHT), x)

    def test_rotation(self):
        def rotate(s):
            return np.stack([-s[..., 1], s[..., 0]], axis=-1)
        y = integrate(rotate, np.array([1.0, 0.0]), np.pi / 2, TIGHT)
        assert y == pytest.approx([0.0, 1.0], abs=1e-11)

    def test_tightening_tolerance_reduces_error(self):
        def rotate(s):
            return np.stack([-s[..., 1], s[..., 0]], axis=-1)
        exact = np.array([np.cos(10.0), np.sin(10.0)])
        errors = []
        for halvings in range(7):
            tol = 1e-6 / 2 ** halvings
            settings = IntegratorSettings(abs_tol=tol, rel_tol=tol)
            y = integrate(rotate, np.array([1.0, 0.0]), 10.0, settings)
            errors.append(float(np.max(np.abs(y - exact))))
            assert errors[-1] <= 100 * tol
        assert errors[-1] < errors[0]

    def test_blow_up_fails(self):
        settings = IntegratorSettings(max_steps=20000)
        with pytest.raises(IntegrationFailure) as info:
            integrate(lambda s: s ** 2, np.array([1.0]), 2.0, settings)
        assert info.value.reason == 'blow up'
        assert float(np.max(info.value.t_reached)) < 1.0
        assert np.max(np.abs(info.value.state)) <= settings.max_norm

    def test_blow_up_threshold_is_configurable(self):
        settings = IntegratorSettings(max_norm=10.0)
        with pytest.raises(IntegrationFailure) as info:
            integrate(lambda s: s ** 2, np.array([1.0]), 2.0, settings)
        assert info.value.reason == 'blow up'
        assert float(np.max(info.value.t_reached)) < 0.95
        assert settings_problems({'max_norm': -1.0})

    def test_domain_escape_is_wrapped(self):
        def field(s):
            if np.any(s > 1.2):
                raise DomainEscape(0)
            return s
        with pytest.raises(IntegrationFailure) as info:
            integrate(field, np.array([1.0]), 1.0, TIGHT)
        assert info.value.reason == 'domain escape'
        assert isinstance(info.value.__cause__, DomainEscape)


class TestFlowOrbit:

    def test_shape_and_wrapping(self, standard):
        field = IvfField(standard, 3)
        x0 = np.array([[3.0, 1.0], [0.1, 0.2]])
        states = flow_orbit(field, x0, 4, TIGHT)
        assert states.shape == (5, 2, 2)
        assert np.all(np.abs(states[..., 0]) <= np.pi)
        assert states[0] == pytest.approx(x0)

    def test_follows_map(self, standard):
        field = IvfField(standard, 5)
        x0 = np.array([0.5, 0.3])
        states = flow_orbit(field, x0, 10, TIGHT)
        mapped = [x0]
        for _ in range(10):
            mapped.append(standard.forward(mapped[-1]))
        assert np.max(np.abs(states - np.array(mapped))) < 1e-7

    def test_advance_lifted(self, standard):
        field = IvfField(standard, 3)
        x = np.array([3.1, 2.0])
        y = advance(field, x, standard.epsilon, TIGHT)
        assert y[0] > np.pi


class TestGrid:

    def test_row_major_points(self):
        grid = Grid((0.0, 0.0), (1.0, 2.0), (2, 3))
        pts = grid.points()
        assert pts.shape == (6, 2)
        assert pts[:4].tolist() == [[0.0, 0.0], [0.0, 1.0], [0.0, 2.0],
                                    [1.0, 0.0]]

    def test_from_dict_broadcasts_resolution(self):
        grid = Grid.from_dict({'lower': [0, 0], 'upper': [1, 1],
                               'resolution': 4})
        assert grid.resolution == (4, 4)
        assert grid.size == 16
        assert grid.dim == 2

    def test_single_sample_axis(self):
        grid = Grid((np.pi, -1.0), (np.pi, 1.0), (1, 3))
        assert np.all(grid.points()[:, 0] == np.pi)

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            Grid((0.0,), (1.0, 1.0), (2, 2))
        with pytest.raises(ValueError):
            Grid((0.0,), (1.0,), (0,))


class TestErrorGrid:
    """log10 |Phi_X_n - F| over grids."""

    def test_vanishes_at_fixed_point(self, standard):
        grid = Grid((-1.0, -1.0), (1.0, 1.0), (3, 3))
        points, log_err = flowmap_error_grid(standard, 3, grid, TIGHT)
        center = np.flatnonzero(np.all(points == 0.0, axis=1))[0]
        assert log_err[center] < -15
        assert np.all(np.isfinite(log_err))

    def test_error_falls_with_order(self, standard):
        grid = Grid((-1.0, -1.0), (1.0, 1.0), (4, 4))
        _, low = flowmap_error_grid(standard, 1, grid, TIGHT)
        _, high = flowmap_error_grid(standard, 3, grid, TIGHT)
        assert np.nanmax(high) < np.nanmax(low) - 2

    def test_points_array_accepted(self, standard):
        pts = np.array([[0.5, 0.5], [1.0, -0.3]])
        points, log_err = flowmap_error_grid(standard, 2, pts, TIGHT)
        assert points is pts or np.array_equal(points, pts)
        assert log_err.shape == (2,)

    def test_failed_points_are_nan(self):
        family = standard_map(0.1)
        settings = IntegratorSettings(abs_tol=1e-13, rel_tol=1e-13,
                                      max_steps=1)
        _, log_err = flowmap_error_grid(family, 2, np.array([[0.5, 0.5]]),
                                        settings)
        assert np.isnan(log_err[0])

    def test_odd_symmetry(self, standard):
        pts = np.random.default_rng(4).uniform(-3.0, 3.0, size=(12, 2))
        _, plus = flowmap_error_grid(standard, 2, pts, TIGHT)
        _, minus = flowmap_error_grid(standard, 2, -pts, TIGHT)
        floor = 1e-13
        assert 10.0 ** minus == pytest.approx(10.0 ** plus, abs=2 * floor)

    def test_error_falls_with_order_on_full_box(self, standard):
        grid = Grid((-np.pi, -2 * np.pi), (np.pi, 2 * np.pi), (6, 6))
        worst = [np.nanmax(flowmap_error_grid(standard, n, grid, TIGHT)[1])
                 for n in (1, 2, 3)]
        assert worst[0] > worst[1] > worst[2]

    @pytest.mark.slow
    def test_error_falls_from_five_to_fifteen(self, standard):
        grid = Grid((-np.pi, -2 * np.pi), (np.pi, 2 * np.pi), (100, 100))
        worst = [np.nanmax(flowmap_error_grid(standard, n, grid, TIGHT)[1])
                 for n in (5, 10, 15)]
        assert worst[0] > worst[1] > worst[2]

    def test_order_of_one_step_error(self):
        pts = np.array([[0.5, 0.4], [-0.8, 0.2]])

        def measure(family, n):
            _, log_err = flowmap_error_grid(family, n, pts, TIGHT)
            return 10.0 ** np.nanmax(log_err)

        errors, slope = order_ladder(standard_map, 1, [0.05, 0.1, 0.2],
                                     measure)
        assert errors[0] < errors[1] < errors[2]
        assert slope == pytest.approx(3.0, abs=0.5)


class TestRestoreField:
    """X_n of a time-eps flow recovers the generating field."""

    def test_pendulum_error_order(self):
        pts = np.array([[0.3, 0.2], [-0.5, 0.6], [1.0, -0.4]])

        def make(eps):
            return make_map('flow', eps,
                            {'field': 'pendulum', 'integ_tol': 1e-13})

        for n, expected in ((1, 2.0), (2, 4.0)):
            errors, slope = order_ladder(
                make, n, [0.1, 0.2, 0.4],
                lambda fam, k: field_error(fam, k, fam.limit_field, pts)
            )
            assert slope == pytest.approx(expected, abs=0.4)
            assert errors[0] < 5e-3


class TestHelpers:

    def test_estimate_cost(self):
        assert estimate_cost(5, 100, steps=2) == 2 * 13 * 10 * 100
        assert estimate_cost(5, 100, power=2) == 13 * 20 * 100

    def test_fit_slope(self):
        xs = [0.1, 0.2, 0.4]
        assert fit_slope(xs, [3 * x ** 4 for x in xs]) == pytest.approx(4.0)

    def test_fit_slope_needs_two_points(self):
        with pytest.raises(ValueError):
            fit_slope([0.0, 0.1], [1.0, 1.0])

    def test_map_points_without_pool(self):
        pts = np.arange(6.0).reshape(3, 2)
        assert np.array_equal(map_points(lambda b: 2 * b, pts), 2 * pts)
