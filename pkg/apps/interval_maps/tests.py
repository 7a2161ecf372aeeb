import numpy as np
from django.test import SimpleTestCase

from apps.interval_maps.assumptions import verify_assumptions
from apps.interval_maps.selectors import branch_rows
from apps.interval_maps.services import (
    image_of_intervals,
    iterate_transfer_of_one_inf,
    make_ball_hole,
    make_beta_map,
    make_centered_hole,
    make_example1_map,
    make_hole_ladder,
    make_left_hole,
    make_union_hole,
    preimage_measure,
    preimages,
)
from apps.interval_maps.types import HoleSpec, WeightFunction


class Example1MapTests(SimpleTestCase):
    def test_fixed_point_and_values(self):
        tmap = make_example1_map(s=2.0)
        self.assertAlmostEqual(float(tmap(0.5)), 0.5)
        self.assertAlmostEqual(float(tmap(0.0)), 1.0)
        self.assertAlmostEqual(float(tmap(0.25)), 0.0)
        self.assertAlmostEqual(float(tmap(0.75)), 1.0)
        self.assertAlmostEqual(float(tmap(1.0)), 0.0)

    def test_three_full_branches(self):
        tmap = make_example1_map(s=2.7)
        self.assertEqual(len(tmap), 3)
        self.assertTrue(all(b.is_full for b in tmap.branches))
        self.assertAlmostEqual(abs(tmap.slopes[0]), 2 / (1 - 1 / 2.7))

    def test_lebesgue_preserved(self):
        for s in (1.5, 2.0, 2.5, 3.0):
            tmap = make_example1_map(s=s)
            self.assertAlmostEqual(preimage_measure(tmap=tmap, a=0.0, b=0.5), 0.5, places=14)
            self.assertAlmostEqual(float(np.sum(1 / np.abs(tmap.slopes))), 1.0, places=14)

    def test_preimages_of_one_half(self):
        found = sorted(y for y, _ in preimages(tmap=make_example1_map(s=2.0), x=0.5))
        np.testing.assert_allclose(found, [1 / 8, 1 / 2, 7 / 8], atol=1e-15)

    def test_rejects_small_slope(self):
        with self.assertRaises(ValueError):
            make_example1_map(s=1.0)

    def test_branch_rows(self):
        rows = branch_rows(make_example1_map(s=2.0), WeightFunction(1.0))
        self.assertEqual([r["g"] for r in rows], [0.25, 0.5, 0.25])


class BetaMapTests(SimpleTestCase):
    def test_tripling(self):
        tmap = make_beta_map(beta=3.0)
        self.assertEqual(len(tmap), 3)
        np.testing.assert_allclose(tmap.lefts, [0, 1 / 3, 2 / 3])
        self.assertTrue(all(b.is_full for b in tmap.branches))

    def test_shifted_map(self):
        tmap = make_beta_map(beta=3.0, r_shift=0.3)
        self.assertAlmostEqual(float(tmap(0.0)), 0.3)
        self.assertEqual(len(tmap), 4)
        self.assertTrue(tmap.is_surjective)

    def test_short_last_branch(self):
        tmap = make_beta_map(beta=2.5)
        self.assertEqual(len(tmap), 3)
        np.testing.assert_allclose(tmap.branches[-1].image, (0.0, 0.5), atol=1e-12)
        self.assertTrue(tmap.is_surjective)
        self.assertEqual(tmap.max_preimage_count, 3)

    def test_preimages_of_zero(self):
        found = sorted(y for y, _ in preimages(tmap=make_beta_map(beta=3.0), x=0.0))
        np.testing.assert_allclose(found, [0, 1 / 3, 2 / 3], atol=1e-15)

    def test_preimage_count_matches_images(self):
        tmap = make_beta_map(beta=2.5)
        for x in (0.1, 0.7):
            expected = sum(1 for b in tmap.branches if b.image[0] <= x <= b.image[1])
            self.assertEqual(len(preimages(tmap=tmap, x=x)), expected)

    def test_one_sided_values_at_boundary(self):
        left, value = make_beta_map(beta=3.0).one_sided_values(1 / 3)
        self.assertAlmostEqual(left, 1.0)
        self.assertAlmostEqual(value, 0.0)

    def test_rejects_small_beta(self):
        with self.assertRaises(ValueError):
            make_beta_map(beta=1.5)


class HoleTests(SimpleTestCase):
    def test_ball_wraps(self):
        hole = make_ball_hole(center=0.05, radius=0.1)
        self.assertEqual(hole.components, 2)
        self.assertAlmostEqual(hole.measure, 0.2)

    def test_centered_and_left(self):
        self.assertAlmostEqual(make_centered_hole(center=0.5, length=0.02).measure, 0.02)
        self.assertEqual(make_left_hole(length=0.1).intervals, ((0.0, 0.1),))

    def test_union_merges_overlaps(self):
        hole = make_union_hole(intervals=[(0.6, 0.7), (0.1, 0.2), (0.15, 0.3)], label=4)
        self.assertEqual(hole.intervals, ((0.1, 0.3), (0.6, 0.7)))
        self.assertEqual(hole.label, 4)
        self.assertAlmostEqual(hole.measure, 0.3)

    def test_union_around_periodic_orbit(self):
        tmap = make_beta_map(beta=3.0)
        self.assertAlmostEqual(float(tmap(tmap(0.125))), 0.125)
        hole = make_union_hole(intervals=[(x - 0.01, x + 0.01) for x in (0.125, 0.375)])
        self.assertEqual(hole.components, 2)
        self.assertTrue(hole.contains(np.array([0.125, 0.375])).all())

    def test_overlapping_components_rejected(self):
        with self.assertRaises(ValueError):
            HoleSpec(intervals=((0.1, 0.3), (0.2, 0.4)))

    def test_ladder_must_nest(self):
        good = [[make_centered_hole(center=0.5, length=length)] for length in (0.1, 0.05)]
        self.assertEqual(len(make_hole_ladder(good)), 2)
        bad = [[make_centered_hole(center=0.5, length=0.05)], [make_centered_hole(center=0.3, length=0.01)]]
        with self.assertRaises(ValueError):
            make_hole_ladder(bad)

    def test_image_of_complement(self):
        tmap = make_example1_map(s=2.0)
        hole = make_centered_hole(center=0.5, length=0.1)
        self.assertEqual(image_of_intervals(tmap=tmap, intervals=hole.complement()), [(0.0, 1.0)])


class AssumptionTests(SimpleTestCase):
    def _example1_window(self, count=12):
        slopes = [2.0, 3.0, 2.0, 2.0, 3.0, 3.0, 2.0, 3.0, 2.0, 3.0, 2.0, 2.0][:count]
        maps = [make_example1_map(s=s) for s in slopes]
        ladder = [[make_centered_hole(center=0.5, length=length) for _ in maps] for length in (0.05, 0.02, 0.01)]
        return maps, ladder

    def test_example1_family_passes(self):
        maps, ladder = self._example1_window()
        report = verify_assumptions(maps=maps, ladder=ladder, weight=WeightFunction(1.0), eps0=0.05)
        self.assertTrue(report.passed, [f.name for f in report.failures()])
        e8 = report.condition("E8")
        # sup g = 1/s on the central branch, so one step is not enough for s = 2
        self.assertAlmostEqual(e8.witness["n1"]["lhs"], 4.5)
        self.assertGreaterEqual(report.n_prime, 2)
        self.assertLess(e8.witness[f"n{report.n_prime}"]["lhs"], e8.witness[f"n{report.n_prime}"]["rhs"])

    def test_full_branch_outside_hole(self):
        maps = [make_beta_map(beta=3.0)] * 6
        ladder = [[HoleSpec(intervals=((0.1, 0.2),)) for _ in maps]]
        report = verify_assumptions(maps=maps, ladder=ladder, weight=WeightFunction(1.0), eps0=0.1, n_prime=1)
        self.assertTrue(report.condition("EX").passed)
        self.assertTrue(report.condition("E7").passed)

    def test_nesting_violation_names_fiber(self):
        maps, ladder = self._example1_window(count=5)
        ladder[2][3] = make_centered_hole(center=0.2, length=0.005)
        report = verify_assumptions(
            maps=maps, ladder=ladder, weight=WeightFunction(1.0), eps0=0.05, fibers=[-2, -1, 0, 1, 2]
        )
        nesting = report.condition("A")
        self.assertFalse(nesting.passed)
        self.assertEqual(nesting.fiber, 1)
        self.assertFalse(report.passed)

    def test_closed_transfer_of_one_is_one(self):
        maps = [make_example1_map(s=2.0), make_example1_map(s=3.0)]
        self.assertAlmostEqual(iterate_transfer_of_one_inf(maps=maps, holes=None, exponent=1.0), 1.0, places=12)
        tripling = [make_beta_map(beta=3.0)]
        self.assertAlmostEqual(iterate_transfer_of_one_inf(maps=tripling, holes=None, exponent=0.0), 3.0)

    def test_open_transfer_of_one_loses_central_weight(self):
        maps = [make_example1_map(s=2.0)]
        holes = [make_centered_hole(center=0.5, length=0.02)]
        self.assertAlmostEqual(iterate_transfer_of_one_inf(maps=maps, holes=holes, exponent=1.0), 0.5, places=12)
