import numpy as np
from django.test import SimpleTestCase

from apps.perturb.extrapolation import fitted_order, neville_extrapolate, richardson_limit
from apps.perturb.selectors import check_rows, first_order_rows, ledger_rows
from apps.perturb.services import (
    check_first_order,
    dual_norm,
    leading_triple,
    matrix_window,
    perturbation_ledger,
    random_positive_cocycle,
)
from apps.perturb.types import MatrixCocycle


def stochastic_cocycle(*, K=80, N=80):
    matrix = np.array([[0.5, 0.2, 0.3], [0.3, 0.5, 0.3], [0.2, 0.3, 0.4]])
    return MatrixCocycle(d=3, K=K, N=N, seed=0, rule="none", closed=np.broadcast_to(matrix, (K + N + 1, 3, 3)))


class ExtrapolationTests(SimpleTestCase):
    def test_neville_is_exact_on_quadratics(self):
        xs = [1e-2, 1e-3, 1e-4]
        ys = [2.0 + 3.0 * x - 5.0 * x * x for x in xs]
        self.assertAlmostEqual(neville_extrapolate(xs, ys), 2.0, places=12)

    def test_neville_rejects_mismatched_samples(self):
        with self.assertRaises(ValueError):
            neville_extrapolate([1.0, 2.0], [1.0])

    def test_richardson_recovers_linear_limit_and_order(self):
        limit, order = richardson_limit([0.04, 0.02, 0.01], [1.0 + 0.5 * x for x in (0.04, 0.02, 0.01)])
        self.assertAlmostEqual(limit, 1.0, places=12)
        self.assertAlmostEqual(order, 1.0, places=8)

    def test_fitted_order(self):
        self.assertAlmostEqual(fitted_order([1e-2, 1e-3, 1e-4], [3e-4, 3e-6, 3e-8]), 2.0, places=8)
        self.assertIsNone(fitted_order([1e-2, 1e-3], [0.0, 1e-5]))


class CocycleTests(SimpleTestCase):
    def test_same_seed_gives_same_cocycle(self):
        a = random_positive_cocycle(d=4, seed=11, K=20, N=20)
        b = random_positive_cocycle(d=4, seed=11, K=20, N=20)
        np.testing.assert_array_equal(a.closed, b.closed)
        for eps in a.ladder:
            np.testing.assert_array_equal(a.perturbed[eps], b.perturbed[eps])

    def test_coordinate_rule_damps_one_column(self):
        cocycle = random_positive_cocycle(d=4, seed=3, K=10, N=10, ladder=[0.1])
        mask = cocycle.masks[0.1]
        self.assertTrue(np.all(np.isclose(mask, 1.0).sum(axis=1) == 3))
        self.assertTrue(np.all(cocycle.matrix(0, 0.1) <= cocycle.matrix(0)))

    def test_rejects_bad_arguments(self):
        with self.assertRaises(ValueError):
            random_positive_cocycle(d=0, seed=1, K=10, N=10)
        with self.assertRaises(ValueError):
            random_positive_cocycle(d=2, seed=1, K=10, N=10, rule="diagonal")
        with self.assertRaises(ValueError):
            random_positive_cocycle(d=2, seed=1, K=10, N=10, ladder=[1.5])

    def test_dual_norm_matches_l1_norm(self):
        functional = np.array([0.5, -1.5, 2.0])
        self.assertAlmostEqual(dual_norm(functional), 4.0)
        self.assertAlmostEqual(dual_norm(np.linspace(-1.0, 1.0, 12)), float(np.abs(np.linspace(-1.0, 1.0, 12)).sum()))


class LeadingTripleTests(SimpleTestCase):
    def test_stochastic_matrix_has_uniform_conformal_vector(self):
        cocycle = stochastic_cocycle()
        window = matrix_window(cocycle=cocycle, lo=-5, hi=5)
        matrix = cocycle.matrix(0)
        values, vectors = np.linalg.eig(matrix)
        stationary = np.real(vectors[:, np.argmax(np.real(values))])
        stationary = stationary / stationary.sum()
        for k in range(-5, 6):
            self.assertAlmostEqual(window.lam_at(k), 1.0, places=12)
            np.testing.assert_allclose(window.nu_at(k), np.ones(3), atol=1e-12)
            np.testing.assert_allclose(window.phi_at(k), stationary, atol=1e-10)

    def test_triple_satisfies_equivariance_and_conformality(self):
        cocycle = random_positive_cocycle(d=5, seed=7, K=80, N=80)
        for eps in (None, cocycle.ladder[0]):
            triple = leading_triple(cocycle=cocycle, eps=eps, k=0)
            self.assertLess(triple.equivariance_residual, 1e-12)
            self.assertLess(triple.conformality_residual, 1e-11)
            self.assertLess(triple.q_phi_residual, 1e-12)
            self.assertLess(triple.nu_q_residual, 1e-11)
            self.assertLess(triple.q_kappa, 1.0)

    def test_window_outside_cocycle_raises(self):
        cocycle = random_positive_cocycle(d=2, seed=1, K=20, N=20)
        with self.assertRaises(IndexError):
            matrix_window(cocycle=cocycle, lo=-10, hi=10)

    def test_open_normalizations(self):
        cocycle = random_positive_cocycle(d=5, seed=7, K=80, N=80)
        closed = matrix_window(cocycle=cocycle, lo=-3, hi=3)
        opened = matrix_window(cocycle=cocycle, eps=1e-2, lo=-3, hi=3, closed=closed)
        for k in range(-3, 4):
            self.assertAlmostEqual(float(closed.nu_at(k) @ opened.phi_at(k)), 1.0, places=12)
            self.assertAlmostEqual(float(opened.nu_at(k) @ opened.phi_at(k)), 1.0, places=12)
            self.assertLess(opened.lam_at(k), closed.lam_at(k))


class LedgerTests(SimpleTestCase):
    def setUp(self):
        self.cocycle = random_positive_cocycle(d=5, seed=7, K=80, N=80)

    def test_identities_hold_to_round_off(self):
        ledger = perturbation_ledger(cocycle=self.cocycle, k=0)
        for entry in ledger.entries:
            self.assertLess(entry.identity_residual, 1e-12)
            self.assertLess(entry.expansion_residual / entry.delta, 1e-10)
            self.assertLessEqual(abs(entry.lam0 - entry.lam_eps), entry.phi_sup * entry.eta * (1 + 1e-12))

    def test_checks_pass_for_coordinate_masks(self):
        ledger = perturbation_ledger(cocycle=self.cocycle, k=0)
        self.assertTrue(ledger.passed, [c for c in ledger.checks if not c.passed])
        self.assertAlmostEqual(ledger.theta0, 1.0, places=8)
        self.assertEqual(len(ledger_rows(ledger)), 3)
        self.assertEqual([row["check"] for row in check_rows(ledger)], [f"P{i}" for i in range(1, 10)])

    def test_first_order_ratio_converges_to_theta(self):
        table = check_first_order(cocycle=self.cocycle, k=0)
        self.assertTrue(table.passed, table.failures)
        self.assertLess(abs(table.extrapolated - table.theta), 1e-8)
        self.assertAlmostEqual(table.order, 1.0, delta=0.2)
        residuals = [row["residual_tol"] for row in first_order_rows(table)]
        self.assertTrue(residuals[0] > residuals[1] > residuals[2])

    def test_scalar_cocycle_ratio_is_exact(self):
        cocycle = random_positive_cocycle(d=1, seed=2, K=80, N=80)
        table = check_first_order(cocycle=cocycle, k=0)
        self.assertTrue(table.passed, table.failures)
        for row in table.rows:
            self.assertAlmostEqual(row.ratio, 1.0, places=12)
        self.assertIsNone(table.order)

    def test_unperturbed_rule_has_no_first_order_term(self):
        cocycle = random_positive_cocycle(d=3, seed=4, K=80, N=80, rule="none")
        ledger = perturbation_ledger(cocycle=cocycle, k=0)
        for entry in ledger.entries:
            self.assertEqual(entry.delta, 0.0)
            self.assertEqual(entry.eta, 0.0)
            self.assertAlmostEqual(entry.lam0, entry.lam_eps, places=12)
        self.assertTrue(ledger.check("P6").passed)
        table = check_first_order(cocycle=cocycle, k=0)
        self.assertFalse(table.passed)

    def test_orthogonal_perturbation_is_flagged(self):
        cocycle = random_positive_cocycle(d=4, seed=5, K=80, N=80, rule="orthogonal")
        ledger = perturbation_ledger(cocycle=cocycle, k=0)
        self.assertFalse(ledger.check("P6").passed)
        table = check_first_order(cocycle=cocycle, k=0)
        self.assertFalse(table.passed)
        self.assertTrue(any(f.startswith("P6") for f in table.failures))
