import math

import numpy as np
import pytest
import scipy.sparse as sp
from django.test import SimpleTestCase

from apps.core.exceptions import NoConvergence, ParamError, ResonanceError, SingularJacobian, SpectrumError
from apps.core.params import ModelParams, StatePoint
from apps.core.services import reaction_jacobian
from apps.equilibria.serializers import CatalogEntrySerializer, RigidityScanSerializer
from apps.equilibria.services import (
    ConstantKind, NewtonSolver, Stability, SteadyStateProblem, constancy_check, constant_catalog,
    constant_stability, critical_beta, distance_to_constant, mode_matrix, simple_mode_eigenvalues,
    simple_point, simple_stability_threshold, small_beta_rigidity_scan, steady_newton,
    symmetric_point,
)
from apps.evolution.services import SystemState
from apps.grids.services import build_grid, neumann_spectrum

from .factories import IntervalFactory, SymmetricPairFactory

BETA_1 = 2.0 / 0.9


def by_kind(catalog, label):
    return next(c for c in catalog if c.label == label)


class CatalogTestCase(SimpleTestCase):
    def test_reference_members_and_residuals(self):
        catalog = constant_catalog(SymmetricPairFactory(beta=1.0))
        self.assertEqual([c.label for c in catalog],
                         ['ZERO', 'PREY_ONLY', 'SIMPLE(1)', 'SIMPLE(2)', 'COEXIST_SYMMETRIC'])
        self.assertTrue(all(c.residual < 1e-12 for c in catalog))

    def test_symmetric_point_at_first_bifurcation(self):
        point = symmetric_point(SymmetricPairFactory(), beta=BETA_1)
        np.testing.assert_allclose(point.as_array(), [0.45, 0.45, 2.0], atol=1e-10)

    def test_segment_family_at_zero_competition(self):
        catalog = constant_catalog(SymmetricPairFactory())
        segment = [c for c in catalog if c.kind is ConstantKind.FAMILY_SEGMENT]
        self.assertEqual(len(segment), 5)
        for member in segment:
            self.assertAlmostEqual(sum(member.point.w), 0.95)
            self.assertLess(member.residual, 1e-12)
        self.assertEqual(segment[2].label, 'FAMILY_SEGMENT(0.5)')

    def test_no_prey_only_without_self_limitation(self):
        catalog = constant_catalog(SymmetricPairFactory(mu=0.0, beta=1.0))
        self.assertNotIn('PREY_ONLY', [c.label for c in catalog])

    def test_nonviable_predator_has_no_simple_solution(self):
        params = ModelParams(lam=1.0, mu=0.05, omega=(1.0, 25.0), kpred=(1.0, 1.0))
        labels = [c.label for c in constant_catalog(params)]
        self.assertIn('SIMPLE(1)', labels)
        self.assertNotIn('SIMPLE(2)', labels)
        self.assertNotIn('COEXIST_SYMMETRIC', labels)

    def test_catalog_entry_document(self):
        params = SymmetricPairFactory(beta=1.0)
        solution = by_kind(constant_catalog(params), 'SIMPLE(1)')
        verdict = constant_stability(params, solution, neumann_spectrum(IntervalFactory(), 64))
        data = CatalogEntrySerializer((solution, verdict)).data
        self.assertEqual(data['kind'], 'SIMPLE(1)')
        self.assertEqual(data['classification'], 'STRONGLY_STABLE')
        self.assertEqual(len(data['critical_eigenvalue']), 2)


class StabilityTestCase(SimpleTestCase):
    def setUp(self):
        self.spectrum = neumann_spectrum(IntervalFactory(), 64)

    def classify(self, params):
        return {c.label: constant_stability(params, c, self.spectrum).classification
                for c in constant_catalog(params)}

    def test_classification_across_competition_levels(self):
        for beta in (0.1, 1.0, 10.0):
            verdicts = self.classify(SymmetricPairFactory(beta=beta))
            self.assertEqual(verdicts['ZERO'], Stability.UNSTABLE)
            self.assertEqual(verdicts['PREY_ONLY'], Stability.UNSTABLE)
            self.assertEqual(verdicts['SIMPLE(1)'], Stability.STRONGLY_STABLE)
            self.assertEqual(verdicts['COEXIST_SYMMETRIC'], Stability.UNSTABLE)

    def test_simple_solution_is_only_weakly_stable_without_competition(self):
        verdicts = self.classify(SymmetricPairFactory())
        self.assertEqual(verdicts['SIMPLE(1)'], Stability.WEAKLY_STABLE)

    def test_simple_solution_spectrum_closed_form(self):
        for beta in (0.5, 1.0, 10.0):
            params = SymmetricPairFactory(beta=beta)
            point = simple_point(params, 0)
            w, damping = point.w[0], params.mu * params.omega[0] / params.kpred[0]
            root = np.sqrt(complex(damping ** 2 - 4 * params.kpred[0] * w * params.omega[0]))
            closed = [-beta * w, -(damping + root) / 2, -(damping - root) / 2]
            numeric = np.linalg.eigvals(reaction_jacobian(params, point))
            np.testing.assert_allclose(np.sort_complex(numeric), np.sort_complex(closed),
                                       atol=1e-10)

    def test_predator_free_spectra_ignore_competition(self):
        for label in ('ZERO', 'PREY_ONLY'):
            spectra = []
            for beta in (0.0, 1.0, 10.0, 100.0):
                params = SymmetricPairFactory(beta=beta)
                point = by_kind(constant_catalog(params), label).point
                spectra.append(np.sort_complex(np.linalg.eigvals(mode_matrix(params, point, 0.0))))
            for spectrum in spectra[1:]:
                np.testing.assert_allclose(spectrum, spectra[0], atol=1e-12, err_msg=label)

    def test_short_spectrum_is_rejected(self):
        params = SymmetricPairFactory(beta=1.0)
        short = neumann_spectrum(IntervalFactory(), 2)
        with self.assertRaises(SpectrumError):
            constant_stability(params, constant_catalog(params)[1], short)

    def test_simple_block_closed_form(self):
        params = SymmetricPairFactory(beta=1.0)
        point = simple_point(params, 0)
        for gamma in (0.0, 1.0, 4.0, 9.0):
            block = mode_matrix(params, point, gamma)[np.ix_([0, 2], [0, 2])]
            numeric = np.sort_complex(np.linalg.eigvals(block))
            closed = np.sort_complex(simple_mode_eigenvalues(params, 0, gamma))
            np.testing.assert_allclose(numeric, closed, atol=1e-10)

    def test_invasion_threshold_matches_bisection(self):
        params = ModelParams(lam=2.0, mu=0.5, omega=(1.0, 0.8), kpred=(1.0, 1.0))
        (j, threshold), = simple_stability_threshold(params, 0)
        self.assertEqual(j, 1)
        self.assertAlmostEqual(threshold, 0.2 / 1.5, places=12)

        def stable(beta):
            p = params.with_beta(beta)
            solution = by_kind(constant_catalog(p), 'SIMPLE(1)')
            return constant_stability(p, solution, self.spectrum).classification is not \
                Stability.UNSTABLE

        low, high = 0.0, 1.0
        for _ in range(40):
            middle = (low + high) / 2
            low, high = (low, middle) if stable(middle) else (middle, high)
        self.assertAlmostEqual(high, threshold, delta=1e-4)

    def test_threshold_needs_a_surviving_predator(self):
        params = ModelParams(lam=1.0, mu=0.05, omega=(25.0, 1.0), kpred=(1.0, 1.0))
        with self.assertRaises(ParamError):
            simple_stability_threshold(params, 0)


class CriticalBetaTestCase(SimpleTestCase):
    def test_reference_values(self):
        params = SymmetricPairFactory()
        values = [critical_beta(params, float(n * n)) for n in range(1, 5)]
        np.testing.assert_allclose(values, [2.0 / 0.9, 8.0 / 0.75, 36.0, 32.0 / 0.15], rtol=1e-12)

    def test_modes_beyond_the_ceiling_never_destabilize(self):
        self.assertIsNone(critical_beta(SymmetricPairFactory(), 25.0))

    def test_resonance(self):
        with self.assertRaises(ResonanceError):
            critical_beta(SymmetricPairFactory(), 0.95 / 0.05)

    def test_needs_a_symmetric_pair(self):
        with self.assertRaises(ParamError):
            critical_beta(ModelParams(lam=1.0, mu=0.05, omega=(1.0, 0.8), kpred=(1.0, 1.0)), 1.0)


class NewtonTestCase(SimpleTestCase):
    def setUp(self):
        self.params = SymmetricPairFactory(beta=1.0)
        self.grid = IntervalFactory()

    def test_jacobian_matches_finite_differences(self):
        problem = SteadyStateProblem(self.params, build_grid(1, [(0.0, 1.0)], 8))
        rng = np.random.default_rng(3)
        v = rng.uniform(0.5, 2.0, problem.size)
        direction = rng.standard_normal(problem.size)
        h = 1e-6
        numeric = (problem.residual(v + h * direction) - problem.residual(v - h * direction)) / (2 * h)
        np.testing.assert_allclose(problem.jacobian(v) @ direction, numeric, rtol=1e-6, atol=1e-6)

    def test_dbeta_matches_finite_differences(self):
        problem = SteadyStateProblem(self.params, build_grid(1, [(0.0, 1.0)], 8))
        v = np.linspace(0.5, 2.0, problem.size)
        h = 1e-6
        numeric = (problem.at_beta(1.0 + h).residual(v) - problem.at_beta(1.0 - h).residual(v)) / (2 * h)
        np.testing.assert_allclose(problem.dbeta(v), numeric, atol=1e-7)

    def test_polishes_a_perturbed_constant(self):
        point = symmetric_point(self.params)
        x, = self.grid.axes
        guess = SystemState(grid=self.grid,
                            w=[np.full(self.grid.size, point.w[0]) + 1e-3 * np.cos(x),
                               np.full(self.grid.size, point.w[1]) - 1e-3 * np.cos(x)],
                            u=np.full(self.grid.size, point.u))
        result = steady_newton(self.params, self.grid, guess)
        self.assertTrue(result.converged)
        self.assertLess(result.residual_norm, 1e-10)
        self.assertLess(distance_to_constant(result.state, point), 1e-8)
        report = constancy_check(result.state, residual=result.residual_norm)
        self.assertEqual(report.flags, (True, True, True))
        self.assertTrue(report.consistent and report.law_checked)

    def test_swapped_guess_lands_on_the_swapped_root(self):
        grid = build_grid(1, [(0.0, math.pi)], 32)
        point = simple_point(self.params, 0)
        x, = grid.axes
        guess = SystemState(grid=grid,
                            w=[point.w[0] * (1 + 0.1 * np.cos(x)), 0.05 * (1 - np.cos(x))],
                            u=np.full(grid.size, point.u))
        root = steady_newton(self.params, grid, guess)
        mirror = steady_newton(self.params, grid, guess.swapped())
        np.testing.assert_allclose(mirror.state.w, root.state.swapped().w, atol=1e-9)
        np.testing.assert_allclose(mirror.state.u, root.state.u, atol=1e-9)

    def test_strict_mode_raises(self):
        guess = SystemState.constant(self.grid, StatePoint(w=(5.0, 0.1), u=3.0))
        with self.assertRaises(NoConvergence):
            steady_newton(self.params, self.grid, guess, solver=NewtonSolver(max_iter=1))
        result = steady_newton(self.params, self.grid, guess, strict=False,
                               solver=NewtonSolver(max_iter=1))
        self.assertFalse(result.converged)

    def test_singular_factorization(self):
        with self.assertRaises(SingularJacobian):
            NewtonSolver().factor(sp.csc_matrix((3, 3)))

    def test_condition_limit(self):
        matrix = sp.diags([1.0, 1e-14]).tocsc()
        with self.assertRaises(SingularJacobian):
            NewtonSolver(cond_limit=1e12).factor(matrix)
        NewtonSolver(cond_limit=0).factor(matrix)


class ConstancyTestCase(SimpleTestCase):
    def test_mixed_flags_break_the_law(self):
        grid = build_grid(1, [(0.0, 1.0)], 8)
        x, = grid.axes
        state = SystemState(grid=grid, w=[np.ones(8), 1 + x], u=np.ones(8))
        report = constancy_check(state, residual=0.0)
        self.assertEqual(report.flags, (True, False, True))
        self.assertFalse(report.consistent)

    def test_vanishing_predators_are_ignored(self):
        grid = build_grid(1, [(0.0, 1.0)], 8)
        x, = grid.axes
        state = SystemState(grid=grid, w=[np.zeros(8), 1 + x], u=1 + x)
        self.assertTrue(constancy_check(state).consistent)


@pytest.mark.slow
class RigidityTestCase(SimpleTestCase):
    def test_small_competition_roots_are_constants(self):
        params = SymmetricPairFactory()
        grid = build_grid(1, [(0.0, math.pi)], 32)
        scan = small_beta_rigidity_scan(params, grid, trials=20, seed=7)
        self.assertAlmostEqual(scan.beta, BETA_1 / 2)
        self.assertGreater(scan.converged, 0)
        self.assertTrue(scan.all_landed, scan.distances)
        self.assertTrue(RigidityScanSerializer(scan).data['all_landed'])
