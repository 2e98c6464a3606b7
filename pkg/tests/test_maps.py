"""
Tests for ivflow.maps: map families, lifts, powers and orbits.
"""

import numpy as np
import pytest

from ivflow.errors import DomainEscape, InverseFailure, NumericalFailure
from ivflow.maps import (
    TWO_PI, UNBOUNDED, Domain, custom_map, displacement, find_periodic_orbit,
    fixed_point_inverse, flow_map, froeschle_map, iterate_power, lift,
    linear_field, make_map, orbit, pendulum_field, standard_map,
    symplectic_defect, wrap_angle,
)


class TestAngles:
    """Angle reduction and lifted displacements."""

    def test_wrap_range(self):
        a = np.array([-3 * np.pi, -np.pi, 0.0, np.pi, 3 * np.pi + 0.5])
        w = wrap_angle(a)
        assert np.all(w > -np.pi - 1e-15) and np.all(w <= np.pi)
        assert w[1] == pytest.approx(np.pi)
        assert w[3] == pytest.approx(np.pi)
        assert w[4] == pytest.approx(-np.pi + 0.5)

    def test_displacement_across_cut(self):
        a = np.array([np.pi - 0.1, 1.0])
        b = np.array([-np.pi + 0.1, 0.0])
        d = displacement(a, b, (True, False))
        assert d == pytest.approx([-0.2, 1.0])

    def test_lift_picks_nearest_representative(self):
        image = np.array([0.1 + 2 * TWO_PI, 5.0])
        lifted = lift(image, np.array([0.0, 0.0]), (True, False))
        assert lifted == pytest.approx([0.1, 5.0])


class TestStandardMap:

    def test_forward_value(self):
        family = standard_map(0.1)
        x = np.array([0.5, 0.2])
        y_new = 0.2 - 0.1 * np.sin(0.5)
        assert family.lifted_forward(x) == pytest.approx(
            [0.5 + 0.1 * y_new, y_new], abs=1e-15
        )

    def test_inverse_round_trip(self):
        family = standard_map(0.3)
        x = np.random.default_rng(0).uniform(-3, 3, size=(20, 2))
        back = family.lifted_inverse(family.lifted_forward(x))
        assert np.allclose(back, x, atol=1e-14)

    def test_metadata(self):
        family = standard_map(0.1)
        assert family.symplectic
        assert family.reversor is None
        assert np.array_equal(family.symmetry, -np.eye(2))
        assert family.angle_mask == (True, False)
        assert family.step == 0.1
        for point in family.fixed_points:
            assert family.forward(np.array(point)) == pytest.approx(point)

    def test_symmetry_commutes(self):
        family = standard_map(0.4)
        x = np.array([[0.3, -1.2], [2.0, 0.7]])
        s = family.symmetry
        assert np.allclose(family.lifted_forward(x @ s.T),
                           family.lifted_forward(x) @ s.T)

    def test_symplectic(self):
        pts = np.array([[0.1, 0.2], [2.0, -1.0]])
        assert symplectic_defect(standard_map(0.5), pts) < 1e-8

    def test_forward_wraps_angle(self):
        family = standard_map(0.5)
        out = family.forward(np.array([3.1, 2.0]))
        assert -np.pi < out[0] <= np.pi


class TestFroeschleMap:

    def test_fixed_points(self, froeschle):
        for point in froeschle.fixed_points:
            image = froeschle.lifted_forward(np.array(point))
            assert image == pytest.approx(point, abs=1e-15)

    def test_inverse_round_trip(self, froeschle):
        x = np.random.default_rng(1).uniform(-2, 2, size=(10, 4))
        back = froeschle.lifted_inverse(froeschle.lifted_forward(x))
        assert np.allclose(back, x, atol=1e-13)

    def test_symplectic(self, froeschle):
        pts = np.array([[3.0, 3.0, -1.0, 1.4], [0.5, -0.2, 0.3, 0.1]])
        assert symplectic_defect(froeschle, pts) < 1e-8

    def test_params_recorded(self, froeschle):
        assert froeschle.params == {'a1': 1.0, 'a2': 0.5, 'a3': 1.25,
                                    'eta': 0.5}

    def test_indefinite_form_warns(self, caplog):
        froeschle_map(0.1, a1=1.0, a2=2.0, a3=1.0)
        assert 'not positive definite' in caplog.text


class TestFlowMap:

    def test_linear_flow(self):
        family = flow_map(linear_field(-0.5), 0.2, dim=1, name='linear')
        x = np.array([[1.0], [2.0]])
        assert family.lifted_forward(x) == pytest.approx(
            x * np.exp(-0.1), rel=1e-11
        )
        assert family.lifted_inverse(family.lifted_forward(x)) == \
            pytest.approx(x, rel=1e-11)

    def test_pendulum_energy(self):
        family = make_map('flow', 0.3, {'field': 'pendulum'})
        x = np.array([1.0, 0.5])
        y = family.lifted_forward(x)

        def energy(s):
            return 0.5 * s[1] ** 2 - np.cos(s[0])
        assert energy(y) == pytest.approx(energy(x), abs=1e-10)
        assert family.limit_field is pendulum_field
        assert family.name == 'flow:pendulum'


class TestCustomMap:

    def test_solved_inverse(self):
        def forward(x):
            return x + 0.1 * np.sin(x)
        family = custom_map('sine', forward, 0.1, dim=1)
        x = np.array([[0.3], [1.7]])
        assert family.lifted_inverse(forward(x)) == pytest.approx(x, abs=1e-12)

    def test_inverse_failure(self):
        def forward(x):
            return 3.0 * x
        solve = fixed_point_inverse(forward, max_iter=5)
        with pytest.raises(InverseFailure):
            solve(np.array([1.0]))


class TestIteratePower:

    def test_power_one_is_identity(self, standard):
        assert iterate_power(standard, 1) is standard

    def test_rejects_zero(self, standard):
        with pytest.raises(ValueError):
            iterate_power(standard, 0)

    def test_composition(self, standard):
        power = iterate_power(standard, 3)
        x = np.array([0.4, 0.1])
        expected = standard.lifted_forward(
            standard.lifted_forward(standard.lifted_forward(x)))
        assert power.lifted_forward(x) == pytest.approx(expected)
        assert power.power == 3
        assert power.step == pytest.approx(0.3)
        assert power.name == 'standard^3'

    def test_lift_removes_winding(self):
        family = standard_map(0.5)
        power = iterate_power(family, 2)
        x = np.array([np.pi, TWO_PI])
        assert power.lifted_forward(x) == pytest.approx(x, abs=1e-12)

    def test_domain_checked(self):
        family = standard_map(0.5, domain=Domain(action_radius=1.0))
        power = iterate_power(family, 4)
        with pytest.raises(DomainEscape):
            power.lifted_forward(np.array([-1.5, 0.99]))


class TestOrbit:

    def test_orbit_shape_and_center(self, standard):
        x0 = np.array([1.0, 0.5])
        states = orbit(standard, x0, -2, 3)
        assert states.shape == (6, 2)
        assert states[2] == pytest.approx(x0)
        assert states[3] == pytest.approx(standard.forward(x0))
        assert states[1] == pytest.approx(standard.inverse(x0))

    def test_range_must_contain_zero(self, standard):
        with pytest.raises(ValueError):
            orbit(standard, np.zeros(2), 1, 3)

    def test_escape_carries_partial_orbit(self):
        family = standard_map(0.5, domain=Domain(action_radius=2.0))
        with pytest.raises(DomainEscape) as info:
            orbit(family, np.array([-1.5, 1.9]), 0, 50)
        assert info.value.index >= 1
        assert len(info.value.partial) == info.value.index


class TestPeriodicOrbit:

    def test_two_periodic_orbit(self):
        family = standard_map(0.5)
        point = find_periodic_orbit(family, 2, np.array([3.1, 6.2]))
        assert abs(wrap_angle(point[0] - np.pi)) < 1e-10
        assert point[1] == pytest.approx(TWO_PI, abs=1e-10)

    def test_guess_already_on_orbit(self):
        family = standard_map(0.5)
        point = find_periodic_orbit(family, 2, np.array([np.pi, TWO_PI]))
        assert abs(wrap_angle(point[0] - np.pi)) < 1e-12
        assert point[1] == pytest.approx(TWO_PI, abs=1e-12)

    def test_residual_below_threshold(self):
        family = standard_map(0.5)
        point = find_periodic_orbit(family, 2, np.array([3.0, 6.0]),
                                    residual_tol=1e-12)
        power = iterate_power(family, 2)
        assert np.max(np.abs(power.lifted_forward(point) - point)) <= 1e-12

    def test_failure_is_numerical(self):
        def forward(x):
            return x + 1.0
        family = custom_map('shift', forward, 0.1, dim=1,
                            inverse=lambda x: x - 1.0)
        with pytest.raises(NumericalFailure):
            find_periodic_orbit(family, 1, np.array([0.0]))


class TestMakeMap:

    def test_kinds(self):
        assert make_map('standard', 0.1).name == 'standard'
        assert make_map('froeschle', 0.1, {'eta': 0.3}).params['eta'] == 0.3
        assert make_map('standard', 0.1, power=2).power == 2

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_map('henon', 0.1)

    def test_default_domain(self):
        assert make_map('standard', 0.1).domain is UNBOUNDED
