import numpy as np
from django.test import SimpleTestCase

from apps.driving.services import build_shift_driving, sample_fiber_path
from apps.driving.types import ParameterAssignment
from apps.interval_maps.services import make_beta_map, make_centered_hole, make_example1_map
from apps.interval_maps.types import HoleSpec, WeightFunction
from apps.transfer_op.constants import MASS_TOLERANCE
from apps.transfer_op.selectors import cell_midpoints, lebesgue_mass_drift, matrix_rows
from apps.transfer_op.services import (
    build_cocycle,
    build_transfer_matrix,
    cocycle_apply,
    grid_size_for,
    hole_mask,
    lasota_yorke_diagnostic,
    open_operator,
    pairing,
)
from apps.transfer_op.types import DimensionMismatchError, GridDensity, HoleMask, WindowError


def example1_path(*, slopes=(2.0, 3.0), K=10, N=10, seed=7):
    assignment = ParameterAssignment.build(map_family="example1", map_params={"s": {"table": list(slopes)}})
    weights = [1.0 / len(slopes)] * len(slopes)
    driving = build_shift_driving(alphabet_size=len(slopes), weights=weights, parameter_assignment=assignment)
    return sample_fiber_path(driving=driving, seed=seed, K=K, N=N)


def quadrature_matrix(tmap, exponent, n, samples_per_cell=400):
    """Brute-force (M e_j)_i by midpoint quadrature of the preimage sum."""
    x = (np.arange(n * samples_per_cell) + 0.5) / (n * samples_per_cell)
    out = np.zeros((n, n))
    for branch in tmap.branches:
        y = branch.inverse(x)
        ok = (y >= branch.left) & (y < branch.right)
        g = abs(branch.slope) ** (-exponent)
        i = (x[ok] * n).astype(int)
        j = np.minimum((y[ok] * n).astype(int), n - 1)
        np.add.at(out, (i, j), g)
    return out / samples_per_cell


class TransferMatrixTests(SimpleTestCase):
    def test_tripling_three_cells(self):
        matrix = build_transfer_matrix(tmap=make_beta_map(beta=3.0), weight=WeightFunction(1.0), n=3)
        np.testing.assert_allclose(matrix.toarray(), np.full((3, 3), 1 / 3), atol=1e-15)
        self.assertTrue(matrix.exact)

    def test_matches_quadrature(self):
        for tmap, n in ((make_beta_map(beta=3.0), 3), (make_example1_map(s=2.0), 8), (make_beta_map(beta=2.5), 10)):
            matrix = build_transfer_matrix(tmap=tmap, weight=WeightFunction(1.0), n=n)
            np.testing.assert_allclose(matrix.toarray(), quadrature_matrix(tmap, 1.0, n), atol=5e-3)

    def test_example1_preserves_constants(self):
        matrix = build_transfer_matrix(tmap=make_example1_map(s=2.0), weight=WeightFunction(1.0), n=4)
        np.testing.assert_allclose(matrix.apply(np.ones(4)), np.ones(4), atol=1e-15)

    def test_counting_weight(self):
        matrix = build_transfer_matrix(tmap=make_beta_map(beta=3.0), weight=WeightFunction(0.0), n=30)
        np.testing.assert_allclose(matrix.apply(np.ones(30)), np.full(30, 3.0), atol=1e-12)

    def test_mass_preserved_on_inexact_grid(self):
        matrix = build_transfer_matrix(tmap=make_example1_map(s=2.5), weight=WeightFunction(1.0), n=1000)
        self.assertLess(lebesgue_mass_drift(matrix), MASS_TOLERANCE)
        f = np.random.default_rng(0).random(1000)
        values = f
        for _ in range(1000):
            values = matrix.apply(values)
        self.assertAlmostEqual(values.mean(), f.mean(), delta=1e-9)

    def test_nonnegative_entries(self):
        matrix = build_transfer_matrix(tmap=make_beta_map(beta=3.0, r_shift=0.3), weight=WeightFunction(1.0), n=50)
        self.assertGreaterEqual(matrix.matrix.data.min(), 0.0)

    def test_matrix_rows_sorted(self):
        rows = matrix_rows(build_transfer_matrix(tmap=make_example1_map(s=2.0), weight=WeightFunction(1.0), n=4))
        keys = [(r["row"], r["col"]) for r in rows]
        self.assertEqual(keys, sorted(keys))
        self.assertEqual(len(rows), 12)


class OpenOperatorTests(SimpleTestCase):
    def setUp(self):
        self.matrix = build_transfer_matrix(tmap=make_example1_map(s=2.0), weight=WeightFunction(1.0), n=100)

    def test_all_ones_mask_is_closed(self):
        opened = open_operator(matrix=self.matrix, mask=HoleMask.closed(100))
        np.testing.assert_array_equal(opened.toarray(), self.matrix.toarray())

    def test_zero_mask_kills_everything(self):
        opened = open_operator(matrix=self.matrix, mask=HoleMask(values=np.zeros(100)))
        self.assertEqual(np.abs(opened.toarray()).max(), 0.0)

    def test_delta_identity_for_lebesgue(self):
        mask = hole_mask(hole=make_centered_hole(center=0.5, length=0.02), n=100)
        opened = open_operator(matrix=self.matrix, mask=mask)
        ones = np.ones(100)
        delta = pairing(np.ones(100), self.matrix.apply(ones) - opened.apply(ones))
        self.assertAlmostEqual(delta, 0.02, places=12)

    def test_open_is_entrywise_below_closed(self):
        mask = hole_mask(hole=HoleSpec(intervals=((0.123, 0.456),)), n=100)
        opened = open_operator(matrix=self.matrix, mask=mask)
        self.assertTrue(np.all(opened.toarray() <= self.matrix.toarray() + 1e-15))

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            open_operator(matrix=self.matrix, mask=HoleMask.closed(99))


class HoleMaskTests(SimpleTestCase):
    def test_fractional_coverage_is_exact(self):
        hole = HoleSpec(intervals=((0.123, 0.456), (0.8, 0.85)))
        mask = hole_mask(hole=hole, n=10)
        self.assertAlmostEqual(mask.hole_measure, hole.measure, places=14)
        self.assertTrue(np.all((mask.values >= 0) & (mask.values <= 1)))

    def test_nested_holes_give_larger_masks(self):
        big = hole_mask(hole=make_centered_hole(center=0.5, length=0.1), n=64)
        small = hole_mask(hole=make_centered_hole(center=0.5, length=0.03), n=64)
        self.assertTrue(np.all(small.values >= big.values))


class GridSizeTests(SimpleTestCase):
    def test_lcm_of_denominators(self):
        maps = [make_example1_map(s=2.0), make_example1_map(s=3.0)]
        n, aligned = grid_size_for(maps=maps, requested=1000)
        self.assertTrue(aligned)
        self.assertEqual(n, 1008)
        self.assertTrue(all(build_transfer_matrix(tmap=m, weight=WeightFunction(1.0), n=n).exact for m in maps))

    def test_irrational_slope_is_unaligned(self):
        n, aligned = grid_size_for(maps=[make_beta_map(beta=2.0 + np.sqrt(2) / 10)], requested=512)
        self.assertFalse(aligned)
        self.assertEqual(n, 512)


class CocycleTests(SimpleTestCase):
    def test_zero_steps_is_identity(self):
        path = example1_path()
        cocycle = build_cocycle(path=path, weight=WeightFunction(1.0), n=12)
        f = GridDensity(values=np.arange(12.0))
        out = cocycle_apply(cocycle=cocycle, k0=0, steps=0, f=f)
        np.testing.assert_array_equal(out.values, f.values)

    def test_closed_cocycle_keeps_one(self):
        path = example1_path()
        cocycle = build_cocycle(path=path, weight=WeightFunction(1.0), n=12)
        self.assertTrue(cocycle.exact)
        out = cocycle_apply(cocycle=cocycle, k0=-10, steps=20, f=GridDensity.constant(12))
        np.testing.assert_allclose(out.values, np.ones(12), atol=1e-12)

    def test_window_overflow(self):
        cocycle = build_cocycle(path=example1_path(K=2, N=2), weight=WeightFunction(1.0), n=12)
        with self.assertRaises(WindowError):
            cocycle_apply(cocycle=cocycle, k0=0, steps=5, f=GridDensity.constant(12))

    def test_open_mass_matches_monte_carlo_survival(self):
        path = example1_path(K=0, N=6, seed=3)
        n = 1200
        holes = [make_centered_hole(center=0.5, length=0.05) for _ in range(len(path))]
        cocycle = build_cocycle(path=path, weight=WeightFunction(1.0), n=n, holes={"eps": holes})
        steps = 5
        survived_mass = cocycle_apply(cocycle=cocycle, label="eps", k0=0, steps=steps, f=GridDensity.constant(n)).integral

        rng = np.random.default_rng(11)
        x = rng.random(10 ** 6)
        alive = np.ones_like(x, dtype=bool)
        for k in range(steps):
            alive &= ~holes[k].contains(x)
            x = cocycle.tmap(k)(x)
        frequency = alive.mean()
        sigma = np.sqrt(frequency * (1 - frequency) / x.size)
        self.assertLess(abs(frequency - survived_mass), 3 * sigma + 1e-12)


class LasotaYorkeTests(SimpleTestCase):
    def test_tripling_bound(self):
        assignment = ParameterAssignment.build(map_family="beta", map_params={"beta": 3.0})
        driving = build_shift_driving(alphabet_size=2, weights=[0.5, 0.5], parameter_assignment=assignment)
        path = sample_fiber_path(driving=driving, seed=1, K=0, N=2)
        cocycle = build_cocycle(path=path, weight=WeightFunction(1.0), n=300)
        result = lasota_yorke_diagnostic(cocycle=cocycle, k0=0, n_prime=1)
        self.assertAlmostEqual(result.bound, 3.0)
        self.assertTrue(result.passed)
        self.assertAlmostEqual(result.empirical_ratio, 1 / 3, places=12)

    def test_example1_bound_uses_central_branch(self):
        path = example1_path(slopes=(2.0, 2.0), K=0, N=3)
        cocycle = build_cocycle(path=path, weight=WeightFunction(1.0), n=400)
        result = lasota_yorke_diagnostic(cocycle=cocycle, k0=0, n_prime=1)
        self.assertAlmostEqual(result.bound, 4.5)
        self.assertTrue(result.passed)

    def test_constant_density_has_no_variation(self):
        matrix = build_transfer_matrix(tmap=make_example1_map(s=2.0), weight=WeightFunction(1.0), n=40)
        self.assertAlmostEqual(float(np.sum(np.abs(np.diff(matrix.apply(np.ones(40)))))), 0.0, places=12)

    def test_cell_midpoints(self):
        np.testing.assert_allclose(cell_midpoints(4), [0.125, 0.375, 0.625, 0.875])
