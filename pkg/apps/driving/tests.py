import numpy as np
from django.test import SimpleTestCase

from apps.driving.selectors import symbol_frequencies
from apps.driving.services import (
    build_markov_driving,
    build_rotation_driving,
    build_shift_driving,
    sample_fiber_path,
    shift_path,
    stationary_distribution,
)
from apps.driving.types import ParameterAssignment, ParameterRule


def _constant_assignment():
    return ParameterAssignment.build(map_family="example1", map_params={"s": 2.0})


class RotationDrivingTests(SimpleTestCase):
    def test_orbit_is_modular_addition(self):
        driving = build_rotation_driving(
            alpha=0.6180339887, parameter_assignment=_constant_assignment(), base_point=0.0
        )
        path = sample_fiber_path(driving=driving, seed=1, K=0, N=2)
        self.assertAlmostEqual(path.state(1), 0.6180339887, places=12)
        self.assertAlmostEqual(path.state(2), 0.2360679774, places=9)

    def test_window_centered_on_base_point(self):
        alpha = 0.31
        driving = build_rotation_driving(alpha=alpha, parameter_assignment=_constant_assignment(), base_point=0.5)
        path = sample_fiber_path(driving=driving, seed=3, K=2, N=2)
        expected = np.mod(0.5 + np.arange(-2, 3) * alpha, 1.0)
        np.testing.assert_allclose(path.states, expected, atol=1e-15)
        self.assertEqual(len(path), 5)

    def test_rational_angle_is_flagged(self):
        driving = build_rotation_driving(alpha=0.5, parameter_assignment=_constant_assignment())
        self.assertTrue(any(w.startswith("rational: not ergodic") for w in driving.warnings))

    def test_irrational_angle_is_not_flagged(self):
        driving = build_rotation_driving(alpha=0.6180339887, parameter_assignment=_constant_assignment())
        self.assertEqual(driving.warnings, ())

    def test_linear_parameter_rule(self):
        assignment = ParameterAssignment.build(map_family="example1", map_params={"s": {"linear": [2, 1]}})
        self.assertAlmostEqual(assignment(0.25).map_param("s"), 2.25)

    def test_rejects_angle_outside_unit_interval(self):
        for alpha in (0.0, 1.0, -0.2, 1.5):
            with self.assertRaises(ValueError):
                build_rotation_driving(alpha=alpha, parameter_assignment=_constant_assignment())

    def test_table_rule_rejected_for_rotation(self):
        assignment = ParameterAssignment.build(map_family="example1", map_params={"s": {"table": [2, 3]}})
        with self.assertRaises(ValueError):
            build_rotation_driving(alpha=0.3, parameter_assignment=assignment)

    def test_base_point_drawn_from_seed(self):
        driving = build_rotation_driving(alpha=0.377, parameter_assignment=_constant_assignment())
        a = sample_fiber_path(driving=driving, seed=11, K=1, N=1)
        b = sample_fiber_path(driving=driving, seed=11, K=1, N=1)
        c = sample_fiber_path(driving=driving, seed=12, K=1, N=1)
        np.testing.assert_array_equal(a.states, b.states)
        self.assertFalse(np.array_equal(a.states, c.states))


class ShiftDrivingTests(SimpleTestCase):
    def _uniform_four(self):
        assignment = ParameterAssignment.build(
            map_family="beta", map_params={"beta": 3.0, "r": {"table": [0.1, 0.2, 0.3, 0.4]}}
        )
        return build_shift_driving(alphabet_size=4, weights=[0.25] * 4, parameter_assignment=assignment)

    def test_same_seed_same_symbols(self):
        driving = self._uniform_four()
        a = sample_fiber_path(driving=driving, seed=42, K=3, N=3)
        b = sample_fiber_path(driving=driving, seed=42, K=3, N=3)
        np.testing.assert_array_equal(a.states, b.states)
        self.assertEqual(len(a), 7)

    def test_windows_agree_on_overlap(self):
        driving = self._uniform_four()
        small = sample_fiber_path(driving=driving, seed=5, K=3, N=3)
        large = sample_fiber_path(driving=driving, seed=5, K=2000, N=1500)
        for k in range(-3, 4):
            self.assertEqual(small.state(k), large.state(k))

    def test_shift_equivariance_of_payloads(self):
        driving = self._uniform_four()
        path = sample_fiber_path(driving=driving, seed=9, K=10, N=10)
        shifted = shift_path(path=path, steps=1)
        for k in range(-10, 10):
            self.assertEqual(path.payload(k + 1), shifted.payload(k))

    def test_degenerate_weights_give_constant_path(self):
        assignment = ParameterAssignment.build(map_family="example1", map_params={"s": {"table": [2, 3]}})
        driving = build_shift_driving(alphabet_size=2, weights=[1.0, 0.0], parameter_assignment=assignment)
        path = sample_fiber_path(driving=driving, seed=1, K=50, N=50)
        self.assertTrue(np.all(path.states == 0))

    def test_rejects_unnormalized_weights(self):
        with self.assertRaises(ValueError):
            build_shift_driving(alphabet_size=2, weights=[0.5, 0.6], parameter_assignment=_constant_assignment())

    def test_rejects_short_table(self):
        assignment = ParameterAssignment.build(map_family="example1", map_params={"s": {"table": [2, 3]}})
        with self.assertRaises(ValueError):
            build_shift_driving(alphabet_size=3, weights=[1 / 3, 1 / 3, 1 / 3], parameter_assignment=assignment)

    def test_symbol_frequencies_match_weights(self):
        weights = np.array([0.1, 0.2, 0.3, 0.4])
        driving = build_shift_driving(
            alphabet_size=4, weights=weights.tolist(), parameter_assignment=_constant_assignment()
        )
        count = 10 ** 6
        freq = symbol_frequencies(driving, seed=2024, count=count)
        bound = 3 * np.sqrt(weights * (1 - weights) / count)
        # 4 sigma slack on the joint check
        self.assertTrue(np.all(np.abs(freq - weights) <= 4 / 3 * bound))


class MarkovDrivingTests(SimpleTestCase):
    transition = [[0.9, 0.1], [0.3, 0.7]]

    def test_stationary_distribution(self):
        pi = stationary_distribution(np.array(self.transition))
        np.testing.assert_allclose(pi, [0.75, 0.25], atol=1e-12)

    def test_markov_windows_agree_on_overlap(self):
        driving = build_markov_driving(transition=self.transition, parameter_assignment=_constant_assignment())
        self.assertEqual(driving.kind, "markov-shift")
        small = sample_fiber_path(driving=driving, seed=17, K=5, N=5)
        large = sample_fiber_path(driving=driving, seed=17, K=40, N=300)
        for k in range(-5, 6):
            self.assertEqual(small.state(k), large.state(k))

    def test_markov_shift_equivariance(self):
        driving = build_markov_driving(transition=self.transition, parameter_assignment=_constant_assignment())
        path = sample_fiber_path(driving=driving, seed=23, K=20, N=20)
        shifted = shift_path(path=path, steps=1)
        np.testing.assert_array_equal(path.states[1:], shifted.states[:-1])

    def test_markov_frequencies_near_stationary(self):
        driving = build_markov_driving(transition=self.transition, parameter_assignment=_constant_assignment())
        freq = symbol_frequencies(driving, seed=4, count=100000)
        np.testing.assert_allclose(freq, [0.75, 0.25], atol=0.02)


class ParameterRuleTests(SimpleTestCase):
    def test_bins_rule(self):
        rule = ParameterRule.from_config({"bins": [1, 2, 3, 4]})
        self.assertEqual(rule.evaluate(0.0), 1.0)
        self.assertEqual(rule.evaluate(0.49), 2.0)
        self.assertEqual(rule.evaluate(0.999), 4.0)

    def test_unknown_rule(self):
        with self.assertRaises(ValueError):
            ParameterRule.from_config({"spline": [1, 2]})
