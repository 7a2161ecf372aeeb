import math

import numpy as np
from django.test import SimpleTestCase, override_settings

from apps.driving.services import build_shift_driving, sample_fiber_path
from apps.driving.types import ParameterAssignment
from apps.evt.closed_forms import chain_qhat, chain_theta, example1_theta, example2_theta, example3_theta
from apps.evt.selectors import gumbel_rows, hitting_rows, qhat_rows, schedule_rows, theta_rows, theta_summary
from apps.evt.services import (
    gumbel_check,
    hitting_time_mc,
    husler_consistency,
    qhat,
    qhat_mass,
    schedule_cocycle,
    solve_thresholds,
    theta_estimate,
)
from apps.evt.types import ObservableSpec, ThresholdError
from apps.interval_maps.services import make_beta_map
from apps.interval_maps.types import HoleSpec, WeightFunction
from apps.thermo.services import thermo_window
from apps.transfer_op.services import build_cocycle
from apps.transfer_op.types import WindowError


def shift_path(*, family, map_params, observable_params=None, scaling=1.0, symbols=2, K=70, N=70, seed=3):
    assignment = ParameterAssignment.build(
        map_family=family, map_params=map_params, observable_params=observable_params, scaling=scaling
    )
    driving = build_shift_driving(
        alphabet_size=symbols, weights=[1.0 / symbols] * symbols, parameter_assignment=assignment
    )
    return sample_fiber_path(driving=driving, seed=seed, K=K, N=N)


def closed_pair(path, n):
    cocycle = build_cocycle(path=path, weight=WeightFunction(1.0), n=n)
    return cocycle, thermo_window(cocycle=cocycle)


class ObservableTests(SimpleTestCase):
    def test_distance_hole_is_a_clipped_interval(self):
        path = shift_path(family="example1", map_params={"s": 2.0}, K=2, N=2)
        observable = ObservableSpec(family="distance", center=0.0)
        self.assertEqual(observable.hole(path.payload(0), 0.1).intervals, ((0.0, 0.1),))
        self.assertAlmostEqual(observable.threshold(0.1), -0.1)

    def test_log_distance_wraps_around_the_circle(self):
        path = shift_path(family="example1", map_params={"s": 2.0}, K=2, N=2)
        observable = ObservableSpec(family="log-distance", center=0.02)
        hole = observable.hole(path.payload(0), 0.05)
        self.assertEqual(hole.components, 2)
        self.assertAlmostEqual(hole.measure, 0.1)
        self.assertAlmostEqual(observable.threshold(0.05), -math.log(0.05))
        self.assertAlmostEqual(float(observable.value(path.payload(0), 0.99)), -math.log(0.03))

    def test_drift_hole_is_the_superlevel_set(self):
        path = shift_path(
            family="example1", map_params={"s": 2.0}, observable_params={"jitter": 2.0, "center": 0.4}, K=2, N=2
        )
        observable = ObservableSpec(family="drift-distance")
        payload = path.payload(0)
        (a, b), = observable.hole(payload, 0.01).intervals
        self.assertAlmostEqual(float(observable.value(payload, a)), -0.01, places=12)
        self.assertAlmostEqual(float(observable.value(payload, b)), -0.01, places=12)
        self.assertGreater(b - 0.4, 0.4 - a)

    def test_unknown_family_is_rejected(self):
        with self.assertRaises(ValueError):
            ObservableSpec(family="peak")


class ThresholdTests(SimpleTestCase):
    def setUp(self):
        self.path = shift_path(family="example1", map_params={"s": 2.0})
        self.cocycle, self.closed = closed_pair(self.path, 1024)

    def test_example1_holes_are_centered_intervals_with_vanishing_xi(self):
        schedule = solve_thresholds(closed=self.closed, observable=ObservableSpec(), ladder=(16, 32, 64))
        for N in schedule.ladder:
            for k in (schedule.lo, 0, schedule.hi):
                (a, b), = schedule.holes[N][self.path.position(k)].intervals
                self.assertAlmostEqual(a, 0.5 - 0.5 / N, delta=1e-8)
                self.assertAlmostEqual(b, 0.5 + 0.5 / N, delta=1e-8)
        self.assertLess(schedule.W, 1e-8)
        self.assertEqual(len(schedule_rows(schedule)), 3 * len(schedule.fibers))

    def test_holes_outside_the_schedule_are_empty(self):
        schedule = solve_thresholds(closed=self.closed, observable=ObservableSpec(), ladder=(16,), lo=0, hi=4)
        self.assertTrue(schedule.holes[16][self.path.position(-1)].is_empty)
        self.assertFalse(schedule.holes[16][self.path.position(4)].is_empty)

    def test_log_distance_ball_has_the_target_measure(self):
        observable = ObservableSpec(family="log-distance", center=0.01)
        schedule = solve_thresholds(closed=self.closed, observable=observable, ladder=(16,))
        hole = schedule.holes[16][self.path.position(0)]
        self.assertEqual(hole.components, 2)
        self.assertAlmostEqual(hole.measure, 1.0 / 16, delta=1e-8)
        self.assertAlmostEqual(schedule.thresholds[0, 0], -math.log(1.0 / 32), delta=1e-6)

    def test_full_target_is_degenerate(self):
        schedule = solve_thresholds(closed=self.closed, observable=ObservableSpec(), ladder=(1,), lo=0, hi=2)
        self.assertEqual(len(schedule.degenerate), 3)
        self.assertEqual(schedule.holes[1][self.path.position(0)].intervals, ((0.0, 1.0),))

    def test_unattainable_target_names_the_fiber(self):
        with self.assertRaises(ThresholdError) as caught:
            solve_thresholds(closed=self.closed, observable=ObservableSpec(), ladder=(1,), bias=0.5, lo=3, hi=5)
        self.assertEqual(caught.exception.fiber, 3)

    def test_ladder_must_increase(self):
        with self.assertRaises(ValueError):
            solve_thresholds(closed=self.closed, observable=ObservableSpec(), ladder=(32, 16))

    def test_husler_average_matches_scaling(self):
        schedule = solve_thresholds(closed=self.closed, observable=ObservableSpec(), ladder=(16, 32))
        report = husler_consistency(schedule=schedule, N=32)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.average, 1.0, places=7)

    def test_husler_flags_a_constant_bias(self):
        schedule = solve_thresholds(closed=self.closed, observable=ObservableSpec(), ladder=(16, 32), bias=0.2)
        self.assertAlmostEqual(schedule.W, 0.2, places=7)
        report = husler_consistency(schedule=schedule, N=32)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report.deviation, 0.2, places=7)

    def test_husler_with_random_scaling(self):
        path = shift_path(family="example1", map_params={"s": 2.0}, scaling={"table": [1.0, 2.0]})
        _, closed = closed_pair(path, 1024)
        schedule = solve_thresholds(closed=closed, observable=ObservableSpec(), ladder=(32,))
        report = husler_consistency(schedule=schedule, N=32)
        self.assertTrue(report.passed)
        self.assertTrue(1.0 <= report.t_mean <= 2.0)


class QhatTests(SimpleTestCase):
    def setUp(self):
        self.path = shift_path(family="example1", map_params={"s": 2.0})
        cocycle, self.closed = closed_pair(self.path, 1024)
        self.schedule = solve_thresholds(closed=self.closed, observable=ObservableSpec(), ladder=(32,))
        self.cocycle = schedule_cocycle(cocycle=cocycle, schedule=self.schedule)

    def test_first_return_is_the_inverse_slope(self):
        series = qhat(cocycle=self.cocycle, closed=self.closed, label=32, k=0)
        self.assertAlmostEqual(series.values[0], 0.5, delta=1e-8)
        self.assertAlmostEqual(series.values[1], 0.0, delta=1e-9)
        self.assertLess(series.cross_residual, 1e-8)
        self.assertTrue(np.all(series.partial_sums <= 1.0 + 1e-9))

    def test_fiber_without_hole_mass_is_excluded(self):
        cocycle = build_cocycle(
            path=self.path, weight=WeightFunction(1.0), n=1024, holes={"none": [HoleSpec()] * len(self.path)}
        )
        series = qhat(cocycle=cocycle, closed=self.closed, label="none", k=0)
        self.assertTrue(series.excluded)
        self.assertTrue(np.all(np.isnan(series.values)))

    def test_series_must_fit_the_closed_window(self):
        with self.assertRaises(WindowError):
            qhat(cocycle=self.cocycle, closed=self.closed, label=32, k=self.closed.lo + 3, k_max=12)

    def test_extended_series_assigns_all_mass_for_large_holes(self):
        path = shift_path(family="example1", map_params={"s": 2.0}, K=200, N=60)
        cocycle, closed = closed_pair(path, 1024)
        schedule = solve_thresholds(closed=closed, observable=ObservableSpec(), ladder=(4,))
        cocycle = schedule_cocycle(cocycle=cocycle, schedule=schedule)
        mass, longest = qhat_mass(cocycle=cocycle, closed=closed, label=4, fibers=range(0, 5), tail_tol=1e-3)
        self.assertLess(abs(mass - 1.0), 1e-3)
        self.assertGreater(longest, 12)

    def test_aperiodic_centers_never_return(self):
        path = shift_path(family="beta", map_params={"beta": 3.0, "r": math.sqrt(2.0) - 1.0})
        cocycle, closed = closed_pair(path, 4096)
        observable = ObservableSpec(family="log-distance", center=0.3)
        schedule = solve_thresholds(closed=closed, observable=observable, ladder=(1024, 2048, 4096))
        report = theta_estimate(cocycle=cocycle, closed=closed, schedule=schedule, fibers=range(0, 5))
        self.assertLess(float(np.max(report.qhat[-1])), 1e-3)
        self.assertAlmostEqual(report.mean_theta, 1.0, delta=1e-2)


class ThetaTests(SimpleTestCase):
    def test_example1_constant_slope(self):
        path = shift_path(family="example1", map_params={"s": 2.0})
        cocycle, closed = closed_pair(path, 4096)
        schedule = solve_thresholds(closed=closed, observable=ObservableSpec(), ladder=(256, 512, 1024))
        report = theta_estimate(
            cocycle=cocycle,
            closed=closed,
            schedule=schedule,
            closed_form=lambda k: example1_theta(closed=closed, k=k),
        )
        self.assertAlmostEqual(report.mean_theta, 0.5, delta=1e-2)
        self.assertLess(report.deviation, 1e-2)
        self.assertLess(report.cross_residual, 1e-8)
        self.assertTrue(report.in_range)
        self.assertEqual(len(theta_rows(report)), len(report.fibers))
        self.assertEqual(len(qhat_rows(report)), 3 * len(report.fibers) * report.k_max)
        self.assertAlmostEqual(theta_summary(report)["integral_t_theta"], report.integral)

    def test_example1_random_slopes(self):
        path = shift_path(family="example1", map_params={"s": {"table": [2.0, 3.0]}})
        cocycle, closed = closed_pair(path, 3072)
        schedule = solve_thresholds(closed=closed, observable=ObservableSpec(), ladder=(192, 384, 768))
        report = theta_estimate(
            cocycle=cocycle,
            closed=closed,
            schedule=schedule,
            closed_form=lambda k: example1_theta(closed=closed, k=k),
        )
        self.assertLess(report.deviation, 1.5e-2)
        expected = np.mean([1.0 - 1.0 / path.payload(k - 1).map_param("s") for k in report.fibers])
        self.assertAlmostEqual(report.closed_form_mean, expected, places=12)

    def test_example1_random_scaling(self):
        path = shift_path(family="example1", map_params={"s": 2.0}, scaling={"table": [1.0, 4.0]})
        cocycle, closed = closed_pair(path, 4096)
        schedule = solve_thresholds(closed=closed, observable=ObservableSpec(), ladder=(256, 512, 1024))
        report = theta_estimate(
            cocycle=cocycle,
            closed=closed,
            schedule=schedule,
            closed_form=lambda k: example1_theta(closed=closed, k=k),
        )
        self.assertLess(report.deviation, 1e-2)
        self.assertGreater(len(set(np.round(report.closed_form, 6))), 1)

    def test_example2_left_holes(self):
        path = shift_path(family="beta", map_params={"beta": {"table": [2.5, 3.5]}})
        cocycle, closed = closed_pair(path, 2048)
        observable = ObservableSpec(family="distance", center=0.0)
        schedule = solve_thresholds(closed=closed, observable=observable, ladder=(64, 128, 256))
        report = theta_estimate(
            cocycle=cocycle,
            closed=closed,
            schedule=schedule,
            fibers=range(0, 10),
            closed_form=lambda k: example2_theta(closed=closed, k=k),
        )
        self.assertAlmostEqual(report.mean_theta, report.closed_form_mean, delta=5e-2)

    def test_example3_jittered_periodic_center(self):
        path = shift_path(
            family="beta",
            map_params={"beta": 3.0},
            observable_params={"center": 0.125, "jitter": {"table": [-1.0, 1.0]}},
        )
        cocycle, closed = closed_pair(path, 3072)
        observable = ObservableSpec(family="drift-distance")
        schedule = solve_thresholds(closed=closed, observable=observable, ladder=(192, 384, 768))
        report = theta_estimate(cocycle=cocycle, closed=closed, schedule=schedule)
        exact = example3_theta(tmap=make_beta_map(beta=3.0), x0=0.125, period=2)
        self.assertAlmostEqual(exact, 8.0 / 9.0, places=12)
        self.assertAlmostEqual(report.mean_theta, exact, delta=1e-2)
        self.assertAlmostEqual(chain_theta(closed=closed, observable=observable, k=0, k_max=12), exact, places=9)

    def test_example4_grammar_first_returns(self):
        path = shift_path(
            family="beta",
            map_params={"beta": {"table": [3.0, 3.0, 4.0, 3.0]}, "r": {"table": [0.05, 0.5, 0.5, 0.2]}},
            observable_params={"center": {"table": [0.3, 0.6, 0.45, 0.95]}},
            symbols=4,
        )
        cocycle, closed = closed_pair(path, 1200)
        observable = ObservableSpec(family="log-distance")
        schedule = solve_thresholds(closed=closed, observable=observable, ladder=(64, 128))
        report = theta_estimate(cocycle=cocycle, closed=closed, schedule=schedule, fibers=range(0, 12))
        for c, k in enumerate(report.fibers):
            exact = chain_qhat(closed=closed, observable=observable, k=k, k_max=12)
            self.assertTrue(any(abs(exact[0] - value) < 1e-9 for value in (0.0, 1.0 / 3.0, 0.25)))
            for r in range(2):
                self.assertAlmostEqual(report.qhat[r, c, 0], exact[0], delta=1e-8)

        # two rungs: linear extrapolation in 1/N from N = 64 and 128
        last = report.truncations[:, :, -1]
        np.testing.assert_allclose(report.theta, 2.0 * last[1] - last[0], atol=1e-12)
        self.assertNotIn("single N: theta not extrapolated", report.notes)


class ClosedFormTests(SimpleTestCase):
    def test_non_periodic_center_is_rejected(self):
        with self.assertRaises(ValueError):
            example3_theta(tmap=make_beta_map(beta=3.0), x0=0.2, period=2)

    def test_chain_matches_example1(self):
        path = shift_path(family="example1", map_params={"s": {"table": [2.0, 3.0]}})
        _, closed = closed_pair(path, 240)
        values = chain_qhat(closed=closed, observable=ObservableSpec(), k=0, k_max=4)
        self.assertAlmostEqual(values[0], 1.0 - example1_theta(closed=closed, k=0), places=9)
        np.testing.assert_array_equal(values[1:], 0.0)


class GumbelHittingTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.path = shift_path(family="example1", map_params={"s": 2.0}, K=60, N=1100)
        cls.cocycle, cls.closed = closed_pair(cls.path, 1024)
        cls.schedule = solve_thresholds(closed=cls.closed, observable=ObservableSpec(), ladder=(256,), lo=0, hi=1030)

    def test_gumbel_forms_agree_with_the_limit(self):
        report = gumbel_check(
            cocycle=self.cocycle, closed=self.closed, schedule=self.schedule, k=0, theta_integral=0.5
        )
        row = report.row(256)
        self.assertAlmostEqual(row.nu_value, math.exp(-0.5), delta=0.03 * math.exp(-0.5))
        self.assertAlmostEqual(row.nu_value, row.mu_value, places=8)
        self.assertLess(row.spread, 0.02)
        self.assertEqual(gumbel_rows(report)[0]["N"], 256)

    def test_hitting_times_are_exponential(self):
        report = hitting_time_mc(
            cocycle=self.cocycle,
            closed=self.closed,
            schedule=self.schedule,
            N=256,
            k=0,
            samples=20000,
            seed=1,
            theta_integral=0.5,
        )
        self.assertLess(report.ks_distance, 0.04)
        self.assertLess(report.max_z_score, 4.0)
        self.assertEqual(report.censored, int(np.count_nonzero(report.times > report.horizon / 256)))
        self.assertGreater(report.censored, 0)
        self.assertEqual(len(hitting_rows(report)), len(report.survival))

    @override_settings(MC_BLOCK_SIZE=500)
    def test_threads_do_not_change_the_sample(self):
        kwargs = dict(
            cocycle=self.cocycle,
            closed=self.closed,
            schedule=self.schedule,
            N=256,
            k=0,
            samples=1500,
            seed=9,
            theta_integral=0.5,
            horizon=300,
        )
        one = hitting_time_mc(threads=1, **kwargs)
        three = hitting_time_mc(threads=3, **kwargs)
        np.testing.assert_array_equal(one.times, three.times)

    def test_whole_space_hole_is_hit_at_once(self):
        schedule = solve_thresholds(closed=self.closed, observable=ObservableSpec(), ladder=(1,), lo=0, hi=10)
        report = hitting_time_mc(
            cocycle=self.cocycle, closed=self.closed, schedule=schedule, N=1, k=0, samples=200, seed=2, theta_integral=1.0
        )
        np.testing.assert_array_equal(report.times, 1.0)
        self.assertEqual(report.censored, 0)
