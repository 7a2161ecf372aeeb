import math

import numpy as np
from django.test import SimpleTestCase, override_settings

from apps.driving.services import build_shift_driving, sample_fiber_path
from apps.driving.types import ParameterAssignment
from apps.interval_maps.services import make_example1_map
from apps.interval_maps.types import WeightFunction
from apps.limits.selectors import azuma_constants, azuma_rows, borel_cantelli_rows, clt_row, qq_points, variance_row
from apps.limits.services import (
    azuma_bound_check,
    birkhoff_sums,
    borel_cantelli_count,
    centered_cells,
    clt_check,
    variance_estimate,
)
from apps.limits.types import BirkhoffObservable, DegenerateVarianceError, RadiusSchedule, SummableScheduleError
from apps.thermo.services import thermo_window
from apps.transfer_op.services import build_cocycle
from apps.transfer_op.types import WindowError


def closed_window(*, family, map_params, n=1536, K=60, N=700, symbols=2, seed=5):
    assignment = ParameterAssignment.build(map_family=family, map_params=map_params)
    driving = build_shift_driving(
        alphabet_size=symbols, weights=[1.0 / symbols] * symbols, parameter_assignment=assignment
    )
    path = sample_fiber_path(driving=driving, seed=seed, K=K, N=N)
    return thermo_window(cocycle=build_cocycle(path=path, weight=WeightFunction(1.0), n=n))


COSINE = BirkhoffObservable(kind="cosine", frequency=1.0)
HALF = BirkhoffObservable(kind="indicator", interval=(0.0, 0.5))
COBOUNDARY = BirkhoffObservable(kind="coboundary", values=(1.0, -2.0, 0.5, 3.0))


class ObservableTests(SimpleTestCase):
    def test_indicator_cells_are_exact(self):
        tmap = make_example1_map(s=2.0)
        np.testing.assert_allclose(HALF.cells(8, tmap), [1, 1, 1, 1, 0, 0, 0, 0], atol=1e-15)
        np.testing.assert_array_equal(HALF.at(np.array([0.1, 0.5, 0.7]), tmap), [1.0, 1.0, 0.0])

    def test_cosine_cells_average_the_function(self):
        tmap = make_example1_map(s=2.0)
        cells = COSINE.cells(4, tmap)
        self.assertAlmostEqual(cells[0], 4.0 * math.sin(math.pi / 2) / (2 * math.pi), places=12)
        self.assertAlmostEqual(float(cells.sum()), 0.0, places=12)

    def test_coboundary_cells_match_points_on_aligned_grids(self):
        tmap = make_example1_map(s=2.0)
        midpoints = (np.arange(64) + 0.5) / 64
        np.testing.assert_allclose(COBOUNDARY.cells(64, tmap), COBOUNDARY.at(midpoints, tmap), atol=1e-12)
        self.assertEqual(COBOUNDARY.sup, 6.0)

    def test_rejects_bad_observables(self):
        with self.assertRaises(ValueError):
            BirkhoffObservable(kind="sine")
        with self.assertRaises(ValueError):
            BirkhoffObservable(kind="step")
        with self.assertRaises(ValueError):
            BirkhoffObservable(kind="indicator", interval=(0.6, 0.2))

    def test_radius_schedules(self):
        self.assertEqual(RadiusSchedule(kind="harmonic", scale=0.2).radius(4), 0.05)
        self.assertEqual(RadiusSchedule(kind="constant", scale=0.9).radius(1), 0.5)
        self.assertTrue(RadiusSchedule(kind="power", scale=0.1, exponent=2.0).is_summable)
        self.assertFalse(RadiusSchedule(kind="power", scale=0.1, exponent=1.0).is_summable)


class VarianceTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.closed = closed_window(family="example1", map_params={"s": {"table": [2.0, 3.0]}})

    def test_zero_observable_has_zero_variance(self):
        report = variance_estimate(closed=self.closed, observable=BirkhoffObservable(kind="step", values=(0.0,)))
        self.assertEqual(report.sigma2, 0.0)

    def test_centering_is_exact(self):
        for k in (0, 7, 100):
            v, _ = centered_cells(closed=self.closed, observable=HALF, k=k)
            i = self.closed.row(k)
            self.assertLess(abs(float(np.dot(self.closed.nu0[i], self.closed.phi0[i] * v)) / self.closed.n), 1e-10)

    def test_green_kubo_matches_the_direct_estimator(self):
        report = variance_estimate(closed=self.closed, observable=HALF, fibers=range(0, 256), lags=40)
        experiment = birkhoff_sums(closed=self.closed, observable=HALF, k=0, n=256, samples=6000, seed=2)
        self.assertGreater(report.sigma2, 0.0)
        self.assertLess(experiment.centering_residual, 1e-10)
        self.assertAlmostEqual(experiment.direct_variance, report.sigma2, delta=0.1 * report.sigma2)
        self.assertEqual(variance_row(report)["lags"], 40)

    def test_rejects_fibers_without_room_for_lags(self):
        with self.assertRaises(WindowError):
            variance_estimate(closed=self.closed, observable=HALF, fibers=[self.closed.hi], lags=5)


class CoboundaryTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.closed = closed_window(family="example1", map_params={"s": 2.0}, N=300)

    def test_coboundary_variance_vanishes(self):
        report = variance_estimate(closed=self.closed, observable=COBOUNDARY)
        self.assertLess(report.sigma2, 1e-10)
        self.assertGreater(report.second_moment, 0.1)

    def test_clt_refuses_coboundaries(self):
        with self.assertRaises(DegenerateVarianceError):
            clt_check(closed=self.closed, observable=COBOUNDARY, k=0, n=64, samples=100, seed=0)

    def test_coboundary_sums_stay_bounded(self):
        experiment = birkhoff_sums(closed=self.closed, observable=COBOUNDARY, k=0, n=200, samples=500, seed=4)
        self.assertLessEqual(float(np.max(np.abs(experiment.sums))), 2.0 * 3.0 + 1e-9)


class TriplingTests(SimpleTestCase):
    def test_cosine_is_uncorrelated_under_tripling(self):
        closed = closed_window(family="beta", map_params={"beta": 3.0}, n=729, N=400)
        report = variance_estimate(closed=closed, observable=COSINE, lags=20)
        self.assertAlmostEqual(report.sigma2, 0.5, delta=1e-3)
        self.assertLess(float(np.max(np.abs(report.correlations))), 1e-3)
        experiment = birkhoff_sums(closed=closed, observable=COSINE, k=0, n=300, samples=6000, seed=8)
        self.assertAlmostEqual(experiment.direct_variance, report.sigma2, delta=0.05)


class CltTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.closed = closed_window(family="example1", map_params={"s": {"table": [2.0, 3.0]}})

    def test_cosine_sums_are_gaussian(self):
        variance = variance_estimate(closed=self.closed, observable=COSINE, fibers=range(0, 200), lags=40)
        report, experiment = clt_check(
            closed=self.closed, observable=COSINE, k=0, n=200, samples=5000, seed=6, variance=variance
        )
        self.assertTrue(report.passed)
        self.assertLess(report.ks_distance, clt_row(report)["ks_tol"])
        self.assertAlmostEqual(report.direct_variance, report.sigma2, delta=0.1 * report.sigma2)
        normal, sample = qq_points(experiment, points=50)
        self.assertLess(float(np.max(np.abs(normal[5:-5] - sample[5:-5]))), 0.15)

    @override_settings(MC_BLOCK_SIZE=300)
    def test_sums_do_not_depend_on_threads(self):
        one = birkhoff_sums(closed=self.closed, observable=COSINE, k=3, n=50, samples=1000, seed=9, threads=1)
        three = birkhoff_sums(closed=self.closed, observable=COSINE, k=3, n=50, samples=1000, seed=9, threads=3)
        np.testing.assert_array_equal(one.sums, three.sums)

    def test_rejects_horizons_outside_the_window(self):
        with self.assertRaises(WindowError):
            birkhoff_sums(closed=self.closed, observable=COSINE, k=0, n=self.closed.hi + 10, samples=10, seed=0)


class AzumaTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.closed = closed_window(family="example1", map_params={"s": {"table": [2.0, 3.0]}})
        cls.report = azuma_bound_check(
            closed=cls.closed,
            observable=COSINE,
            k=0,
            deviations=(0.2, 2.5),
            horizons=(128, 512),
            samples=2000,
            seed=12,
        )

    def test_large_deviations_never_happen(self):
        rows = [row for row in self.report.rows if row.deviation == 2.5]
        self.assertTrue(all(row.empirical == 0.0 for row in rows))

    def test_bound_holds_past_n0(self):
        self.assertEqual(self.report.violations, [])
        for row in azuma_rows(self.report):
            if row["applies"]:
                self.assertLessEqual(row["empirical"], row["bound"])

    def test_constants_are_assembled_from_the_decay_fit(self):
        c = self.report.constants
        self.assertGreaterEqual(c.U, 1.0)
        self.assertLess(c.kappa, 1.0)
        self.assertAlmostEqual(c.C1, c.U ** 2 * c.D * c.C2 / (1.0 - c.kappa), places=10)
        means = [centered_cells(closed=self.closed, observable=COSINE, k=k)[1] for k in range(513)]
        self.assertAlmostEqual(c.C2, 1.0 + max(abs(m) for m in means), places=12)
        self.assertEqual(azuma_constants(self.report)["C1"], c.C1)

    def test_martingale_increments_have_zero_conditional_mean(self):
        self.assertLess(self.report.martingale_residual, 1e-10)
        self.assertLessEqual(self.report.g_norm_ratio, 1.0 + 1e-9)


class BorelCantelliTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.closed = closed_window(family="example1", map_params={"s": {"table": [2.0, 3.0]}})

    def test_constant_radius_follows_birkhoff(self):
        schedule = RadiusSchedule(kind="constant", scale=0.05)
        report = borel_cantelli_count(closed=self.closed, center=0.3, schedule=schedule, k=0, n=200, samples=2000, seed=1)
        self.assertAlmostEqual(report.expected, 200 * 0.1, delta=1e-9)
        self.assertAlmostEqual(report.ratio, 1.0, delta=0.03)
        self.assertEqual(borel_cantelli_rows(report)[-1]["n"], 200)

    def test_harmonic_radius_expectation_diverges_slowly(self):
        schedule = RadiusSchedule(kind="harmonic", scale=0.1)
        report = borel_cantelli_count(closed=self.closed, center=0.3, schedule=schedule, k=0, n=400, samples=4000, seed=2)
        expected = sum(0.2 / j for j in range(1, 401))
        self.assertAlmostEqual(report.expected, expected, delta=1e-9)
        self.assertAlmostEqual(report.ratio, 1.0, delta=0.1)
        ratios = [ratio for _, _, ratio in report.checkpoints]
        self.assertEqual(len(ratios), 4)

    def test_summable_schedule_is_refused(self):
        schedule = RadiusSchedule(kind="power", scale=0.1, exponent=2.0)
        with self.assertRaises(SummableScheduleError):
            borel_cantelli_count(closed=self.closed, center=0.3, schedule=schedule, k=0, n=100, samples=10, seed=0)
