import math

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from apps.driving.services import build_shift_driving, sample_fiber_path, worker_generator
from apps.driving.types import ParameterAssignment
from apps.interval_maps.services import make_centered_hole
from apps.interval_maps.types import HoleSpec, WeightFunction
from apps.thermo.sampling import reverse_orbits, sample_cells
from apps.thermo.selectors import escape_rows, pressure_gap, thermo_rows
from apps.thermo.services import (
    conditionally_invariant,
    conformal_functional,
    correlation_check,
    decay_rate,
    equivariant_density,
    escape_rate,
    fiber_data,
    multiplier_monotonicity,
    perturbation_identity,
    pilot_depth,
    survivor_curve,
    survivor_measure,
    thermo_window,
)
from apps.thermo.constants import CERTIFICATION_OFFSET
from apps.thermo.types import ConvergenceError, DegenerateHoleError
from apps.transfer_op.services import build_cocycle, pairing
from apps.transfer_op.types import WindowError


def shift_path(*, family, name, values, K=60, N=60, seed=5):
    values = list(values) * (2 if len(values) == 1 else 1)
    assignment = ParameterAssignment.build(map_family=family, map_params={name: {"table": list(values)}})
    weights = [1.0 / len(values)] * len(values)
    driving = build_shift_driving(alphabet_size=len(values), weights=weights, parameter_assignment=assignment)
    return sample_fiber_path(driving=driving, seed=seed, K=K, N=N)


def centered_cocycle(*, slopes=(2.0,), n=200, lengths=(0.02,), K=60, N=60):
    path = shift_path(family="example1", name="s", values=slopes, K=K, N=N)
    holes = {
        length: [make_centered_hole(center=0.5, length=length) for _ in range(len(path))] for length in lengths
    }
    return build_cocycle(path=path, weight=WeightFunction(1.0), n=n, holes=holes)


class ClosedWindowTests(SimpleTestCase):
    def test_example1_lebesgue_is_invariant_and_conformal(self):
        cocycle = centered_cocycle(slopes=(2.0, 3.0), n=240, lengths=())
        window = thermo_window(cocycle=cocycle)
        np.testing.assert_allclose(window.lam, 1.0, atol=1e-12)
        np.testing.assert_allclose(window.phi, 1.0, atol=1e-9)
        np.testing.assert_allclose(window.nu, 1.0, atol=1e-9)
        self.assertLess(window.certification, 1e-9)

    def test_single_fiber_helpers(self):
        cocycle = centered_cocycle(slopes=(2.0, 3.0), n=240, lengths=())
        phi, lam = equivariant_density(cocycle=cocycle, k=0)
        self.assertAlmostEqual(lam, 1.0, places=12)
        self.assertAlmostEqual(phi.integral, 1.0, places=9)
        nu = conformal_functional(cocycle=cocycle, k=0)
        self.assertAlmostEqual(float(np.mean(nu)), 1.0, places=12)

    def test_beta_density_is_equivariant(self):
        path = shift_path(family="beta", name="beta", values=(2.5, 3.5))
        cocycle = build_cocycle(path=path, weight=WeightFunction(1.0), n=400)
        window = thermo_window(cocycle=cocycle)
        self.assertLess(float(window.residual.max()), 1e-9)
        self.assertTrue(np.all(window.phi > 0))
        for k in window.fibers:
            i = window.row(k)
            self.assertAlmostEqual(pairing(window.nu0[i], window.phi0[i]), 1.0, places=12)

    def test_shallow_depth_fails_certification(self):
        path = shift_path(family="beta", name="beta", values=(2.5, 3.5))
        cocycle = build_cocycle(path=path, weight=WeightFunction(1.0), n=100)
        with self.assertRaises(ConvergenceError) as caught:
            thermo_window(cocycle=cocycle, depth=1, tol=1e-14)
        self.assertGreater(caught.exception.residual, 1e-14)

    def test_window_too_short(self):
        cocycle = centered_cocycle(K=10, N=10, lengths=())
        with self.assertRaises(WindowError):
            thermo_window(cocycle=cocycle)


class PilotDepthTests(SimpleTestCase):
    def beta_cocycle(self, beta):
        path = shift_path(family="beta", name="beta", values=(beta,))
        return build_cocycle(path=path, weight=WeightFunction(1.0), n=1024)

    def test_slow_mixing_map_pulls_deeper(self):
        doubling = pilot_depth(cocycle=self.beta_cocycle(2.0))
        tripling = pilot_depth(cocycle=self.beta_cocycle(3.0))
        self.assertGreater(doubling, tripling)
        for depth in (doubling, tripling):
            self.assertGreaterEqual(depth, CERTIFICATION_OFFSET)
            self.assertLessEqual(depth, settings.MAX_PULL_DEPTH)

    def test_window_uses_pilot_depth(self):
        cocycle = self.beta_cocycle(2.0)
        window = thermo_window(cocycle=cocycle)
        self.assertEqual(window.depth, pilot_depth(cocycle=cocycle))
        self.assertLess(window.certification, settings.THERMO_TOL)

    def test_depth_fits_requested_fibers(self):
        cocycle = self.beta_cocycle(2.0)
        depth = pilot_depth(cocycle=cocycle, lo=-40, hi=40)
        self.assertEqual(depth, 60 - 40 - CERTIFICATION_OFFSET - 1)

    def test_explicit_depth_is_kept(self):
        cocycle = self.beta_cocycle(3.0)
        self.assertEqual(thermo_window(cocycle=cocycle, depth=12).depth, 12)


class OpenWindowTests(SimpleTestCase):
    def setUp(self):
        self.cocycle = centered_cocycle(lengths=(0.02,))
        self.window = thermo_window(cocycle=self.cocycle, label=0.02)

    def test_first_order_multiplier(self):
        # theta = 1/2 for a centered hole under the doubling central branch
        np.testing.assert_allclose(self.window.lam, 0.99, atol=1e-3)
        self.assertTrue(np.all(self.window.lam < 1.0))

    def test_normalizations(self):
        for k in (self.window.lo, self.window.hi):
            i = self.window.row(k)
            self.assertAlmostEqual(pairing(self.window.nu[i], self.window.phi[i]), 1.0, places=12)
            self.assertAlmostEqual(pairing(self.window.nu0[i], self.window.phi[i]), 1.0, places=12)
            self.assertAlmostEqual(pairing(self.window.zeta(k), self.window.h(k)), 1.0, places=12)
        self.assertLess(float(self.window.residual.max()), 1e-9)

    def test_hole_measure_matches_lebesgue(self):
        np.testing.assert_allclose(self.window.hole_measure, 0.02, atol=1e-12)

    def test_fiber_data(self):
        data = fiber_data(window=self.window, k=0)
        self.assertEqual(data.fiber, 0)
        self.assertEqual(data.label, 0.02)
        self.assertGreater(data.phi_bounds[0], 0.0)

    def test_full_hole_is_degenerate(self):
        path = self.cocycle.path
        cocycle = build_cocycle(
            path=path,
            weight=WeightFunction(1.0),
            n=200,
            holes={"all": [HoleSpec(intervals=((0.0, 1.0),)) for _ in range(len(path))]},
        )
        with self.assertRaises(DegenerateHoleError):
            thermo_window(cocycle=cocycle, label="all")


class PerturbationIdentityTests(SimpleTestCase):
    def setUp(self):
        self.cocycle = centered_cocycle(slopes=(2.0, 3.0), n=200, lengths=(0.04, 0.02))
        self.closed = thermo_window(cocycle=self.cocycle)
        self.windows = [
            thermo_window(cocycle=self.cocycle, label=length, closed=self.closed) for length in (0.04, 0.02)
        ]

    def test_delta_is_lambda_times_hole_measure(self):
        for window in self.windows:
            for k in (window.lo, 0, window.hi):
                result = perturbation_identity(window=window, k=k)
                self.assertLess(result.delta_residual, 1e-10)
                self.assertAlmostEqual(result.predicted_delta, window.label, places=9)

    def test_eta_attains_its_bound(self):
        result = perturbation_identity(window=self.windows[0], k=0)
        self.assertLessEqual(result.eta, result.eta_bound * (1 + 1e-10))
        self.assertAlmostEqual(result.eta, result.eta_bound, places=10)

    def test_open_functional_is_conformal(self):
        for window in self.windows:
            self.assertLess(perturbation_identity(window=window, k=0, seed=3).conformality_residual, 1e-9)

    def test_closed_window_rejected(self):
        with self.assertRaises(ValueError):
            perturbation_identity(window=self.closed, k=0)

    def test_multipliers_grow_as_the_hole_shrinks(self):
        report = multiplier_monotonicity(windows=self.windows)
        self.assertTrue(report.passed)
        self.assertEqual(report.labels, (0.04, 0.02))
        reversed_report = multiplier_monotonicity(windows=self.windows[::-1])
        self.assertFalse(reversed_report.passed)


class SurvivorTests(SimpleTestCase):
    def setUp(self):
        self.cocycle = centered_cocycle(slopes=(2.0, 3.0), n=1200, lengths=(0.02,), K=80, N=90)
        self.window = thermo_window(cocycle=self.cocycle, label=0.02)

    def test_one_step_mu_survivor(self):
        result = survivor_measure(window=self.window, k=0, steps=1, which="mu")
        self.assertAlmostEqual(result.value, 0.98, places=12)

    def test_zero_steps(self):
        self.assertAlmostEqual(survivor_measure(window=self.window, k=0, steps=0).value, 1.0, places=12)

    def test_spectral_prediction(self):
        for which in ("nu", "mu"):
            result = survivor_measure(window=self.window, k=-15, steps=50, which=which)
            self.assertLess(abs(result.value - result.prediction), 1e-8 * result.value)

    def test_curve_matches_single_values(self):
        curve = survivor_curve(window=self.window, k=0, steps=6)
        self.assertAlmostEqual(curve[6], survivor_measure(window=self.window, k=0, steps=6).value, places=14)
        self.assertTrue(np.all(np.diff(curve) <= 1e-15))

    def test_closed_survivor_is_one(self):
        closed = thermo_window(cocycle=self.cocycle)
        self.assertAlmostEqual(survivor_measure(window=closed, k=0, steps=20).value, 1.0, places=10)

    def test_bad_measure_name(self):
        with self.assertRaises(ValueError):
            survivor_measure(window=self.window, k=0, steps=1, which="lebesgue")


class EscapeRateTests(SimpleTestCase):
    def test_centered_ladder_extrapolates_to_one_half(self):
        lengths = (0.04, 0.02, 0.01)
        cocycle = centered_cocycle(lengths=lengths, K=60, N=120)
        closed = thermo_window(cocycle=cocycle)
        windows = {length: thermo_window(cocycle=cocycle, label=length, closed=closed) for length in lengths}
        report = escape_rate(windows=windows, steps=60, target=0.5)
        for row in report.rows:
            self.assertLess(row.agreement, 1e-2)
            self.assertAlmostEqual(row.hole_measure, row.label, places=12)
        self.assertLess(report.deviation, 0.02)
        self.assertEqual(len(escape_rows(report)), 3)

    def test_empty_holes_have_no_ratio(self):
        path = shift_path(family="example1", name="s", values=(2.0,))
        cocycle = build_cocycle(
            path=path, weight=WeightFunction(1.0), n=200, holes={"none": [HoleSpec() for _ in range(len(path))]}
        )
        window = thermo_window(cocycle=cocycle, label="none")
        report = escape_rate(windows={"none": window}, steps=8)
        self.assertTrue(math.isnan(report.extrapolated_ratio))
        self.assertAlmostEqual(report.rows[0].rate_birkhoff, 0.0, places=12)
        self.assertAlmostEqual(pressure_gap(window), 0.0, places=12)


class ConditionalInvarianceTests(SimpleTestCase):
    def test_pushforward_matches_next_fiber(self):
        cocycle = centered_cocycle(slopes=(2.0, 3.0), n=240, lengths=(0.05,))
        window = thermo_window(cocycle=cocycle, label=0.05)
        result = conditionally_invariant(window=window, k=0)
        self.assertLess(result.residual, 1e-9)
        self.assertGreater(result.bounds[0], 0.0)
        self.assertAlmostEqual(pairing(window.nu0[window.row(0)], result.density.values), 1.0, places=12)
        expected_rho = window.lam_at(0) * window.nu_of_one(0) / window.nu_of_one(1)
        self.assertAlmostEqual(result.rho, expected_rho, places=14)


class DecayTests(SimpleTestCase):
    def test_four_cell_example1_rate(self):
        cocycle = centered_cocycle(n=4, lengths=(), N=90)
        window = thermo_window(cocycle=cocycle)
        report = decay_rate(window=window, k=0, steps=30)
        self.assertAlmostEqual(report.kappa, 0.5, delta=1e-6)

    def test_function_with_mass_is_rejected(self):
        cocycle = centered_cocycle(n=4, lengths=())
        window = thermo_window(cocycle=cocycle)
        with self.assertRaises(ValueError):
            decay_rate(window=window, k=0, steps=5, functions=[window.phi[window.row(0)]])

    def test_open_rate_stays_below_one(self):
        cocycle = centered_cocycle(slopes=(2.0, 3.0), n=240, lengths=(0.05,), N=90)
        window = thermo_window(cocycle=cocycle, label=0.05)
        report = decay_rate(window=window, k=0, steps=20)
        self.assertLess(report.kappa, 0.75)

    def test_correlations_decay(self):
        cocycle = centered_cocycle(slopes=(2.0, 3.0), n=240, lengths=(0.05,), N=90)
        window = thermo_window(cocycle=cocycle, label=0.05)
        self.assertTrue(correlation_check(window=window, k=0, steps=20).passed)


class ReverseSamplerTests(SimpleTestCase):
    def setUp(self):
        # shifted tripling maps: integer slopes on a 600-cell grid, so phi0 is exact
        assignment = ParameterAssignment.build(map_family="beta", map_params={"beta": 3.0, "r": {"table": [0.3, 0.6]}})
        driving = build_shift_driving(alphabet_size=2, weights=[0.5, 0.5], parameter_assignment=assignment)
        path = sample_fiber_path(driving=driving, seed=9, K=60, N=60)
        self.cocycle = build_cocycle(path=path, weight=WeightFunction(1.0), n=600)
        self.window = thermo_window(cocycle=self.cocycle)

    def test_orbits_follow_the_maps(self):
        orbit = dict(reverse_orbits(window=self.window, k=0, steps=5, size=2000, rng=worker_generator(seed=1, worker=0)))
        self.assertEqual(sorted(orbit), list(range(6)))
        for j in range(5):
            np.testing.assert_allclose(self.cocycle.tmap(j)(orbit[j]), orbit[j + 1], atol=1e-12)

    def test_start_points_follow_the_equivariant_measure(self):
        size = 40000
        orbit = dict(reverse_orbits(window=self.window, k=0, steps=8, size=size, rng=worker_generator(seed=2, worker=0)))
        i = self.window.row(0)
        density = self.window.phi0[i] * self.window.nu0[i]
        expected = density.reshape(10, 60).sum(axis=1) / density.sum()
        observed = np.bincount(np.minimum((orbit[0] * 10).astype(int), 9), minlength=10) / size
        sigma = np.sqrt(expected * (1 - expected) / size)
        self.assertTrue(np.all(np.abs(observed - expected) < 5 * sigma))

    def test_sample_cells_rejects_zero_density(self):
        with self.assertRaises(ValueError):
            sample_cells(density=np.zeros(4), size=3, rng=np.random.default_rng(0))


class SelectorTests(SimpleTestCase):
    def test_thermo_rows(self):
        cocycle = centered_cocycle(lengths=(0.02,))
        window = thermo_window(cocycle=cocycle, label=0.02)
        rows = thermo_rows(window)
        self.assertEqual(len(rows), window.hi - window.lo + 1)
        self.assertEqual(rows[0]["fiber"], window.lo)
        self.assertAlmostEqual(rows[0]["rho"], window.rho(window.lo))
