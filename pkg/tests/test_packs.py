import math
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest
from django.test import SimpleTestCase, override_settings

from apps.core.exceptions import DomainError, ParamError, SpectrumError
from apps.core.params import ModelParams, StatePoint
from apps.equilibria.services import SteadyStateProblem, simple_point, symmetric_point
from apps.evolution.services import SystemState
from apps.grids.services import build_grid, neumann_spectrum
from apps.packs.exporters import read_population_curves, write_population_curves
from apps.packs.serializers import OptimReportSerializer, PackBoundReportSerializer
from apps.packs.services import (
    STEADY_RATE_TOL, OptimReport, PackCandidate, block_seed, candidate_from_dict,
    candidate_to_dict, dichotomy_check, flow_norm, gamma_bar, gamma_from_one, optimize_packs,
    pack_bound, pick_best, population, population_identities, reflect_half_solution, relax,
    solve_half_system_1d, unit_ball_volume, verify_identities_mu0,
)
from apps.packs.tasks import solve_pack_cell

from .factories import IntervalFactory, SymmetricPairFactory


def unit_interval_params(ceiling):
    """lambda = k = omega = 1 with mu chosen so that gamma_bar equals ``ceiling``"""
    return ModelParams.symmetric_pair(lam=1.0, mu=1.0 / (ceiling + 1.0), omega=1.0, kpred=1.0)


def fake_cell(params, grid, n, beta, t_max=200.0, newton_tol=None):
    return PackCandidate(n=n, beta=beta, population=10.0 * n + beta, physical=True,
                         converged=True, positive_count=n, residual=1e-12)


class PackBoundTestCase(SimpleTestCase):
    def test_unit_ball_volume(self):
        self.assertAlmostEqual(unit_ball_volume(0), 1.0)
        self.assertAlmostEqual(unit_ball_volume(1), 2.0)
        self.assertAlmostEqual(unit_ball_volume(2), math.pi)
        self.assertAlmostEqual(unit_ball_volume(3), 4.0 * math.pi / 3.0)

    def test_interval_counts(self):
        grid = build_grid(1, [(0.0, 1.0)], 64)
        report = pack_bound(unit_interval_params(99.0), grid)
        self.assertAlmostEqual(report.gamma_bar, 99.0, places=8)
        self.assertEqual(report.n_bar_exact, 4)
        self.assertAlmostEqual(report.n_bar_weyl, math.sqrt(99.0) / math.pi, places=8)
        self.assertAlmostEqual(report.n_bar_weyl_corrected, report.n_bar_weyl + 0.5, places=8)
        self.assertEqual(PackBoundReportSerializer(report).data['n_bar_exact'], 4)

    def test_boundary_term_improves_the_square(self):
        grid = build_grid(2, [(0.0, 1.0), (0.0, 1.0)], [32, 32])
        report = pack_bound(unit_interval_params(400.0), grid)
        self.assertEqual(report.n_bar_exact, 39)
        self.assertAlmostEqual(report.n_bar_weyl, 100.0 / math.pi, places=6)
        self.assertLess(abs(report.n_bar_weyl_corrected - 39), abs(report.n_bar_weyl - 39))

    def test_short_spectrum_is_rejected(self):
        grid = build_grid(1, [(0.0, 1.0)], 64)
        with self.assertRaises(SpectrumError):
            pack_bound(unit_interval_params(99.0), grid, neumann_spectrum(grid, 3))

    def test_gamma_bar_needs_mu(self):
        with self.assertRaises(ParamError) as ctx:
            gamma_bar(SymmetricPairFactory(mu=0.0))
        self.assertEqual(str(ctx.exception), 'gamma_bar undefined when mu = 0')
        self.assertEqual(ctx.exception.field, 'mu')

    def test_eigenvalues_count_from_one(self):
        spectrum = neumann_spectrum(IntervalFactory(), 4)
        self.assertEqual(gamma_from_one(spectrum, 1), 0.0)
        self.assertEqual(gamma_from_one(spectrum, 3), 4.0)
        with self.assertRaises(SpectrumError):
            gamma_from_one(spectrum, 0)


@pytest.mark.parametrize('ceiling, tolerance', [(1e2, 0.15), (1e3, 0.05), (1e4, 0.02)])
def test_weyl_estimate_tracks_the_exact_count(ceiling, tolerance):
    report = pack_bound(unit_interval_params(ceiling), build_grid(1, [(0.0, 1.0)], 128))
    assert abs(report.n_bar_weyl_corrected / report.n_bar_exact - 1.0) < tolerance


def test_one_term_weyl_ratio_approaches_one():
    grid = build_grid(1, [(0.0, 1.0)], 128)
    gaps = [abs(r.n_bar_weyl / r.n_bar_exact - 1.0)
            for r in (pack_bound(unit_interval_params(c), grid) for c in (1e2, 1e3, 1e4))]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.01


class IdentitiesTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = IntervalFactory()

    def test_constant_coexistence_without_prey_limitation(self):
        params = SymmetricPairFactory(mu=0.0, beta=2.0)
        state = SystemState.constant(self.grid, symmetric_point(params))
        self.assertAlmostEqual(population(self.grid, state), math.pi)
        first, second = verify_identities_mu0(self.grid, params, state)
        self.assertAlmostEqual(first, 0.0, places=10)
        self.assertAlmostEqual(second, 0.0, places=10)

    def test_mu0_identities_refuse_prey_limitation(self):
        params = SymmetricPairFactory()
        state = SystemState.constant(self.grid, symmetric_point(params))
        with self.assertRaises(ParamError):
            verify_identities_mu0(self.grid, params, state)

    def test_prey_must_be_positive(self):
        state = SystemState.constant(self.grid, StatePoint(w=(1.0, 1.0), u=0.0))
        with self.assertRaises(DomainError):
            population_identities(self.grid, SymmetricPairFactory(mu=0.0), state)

    def test_predators_must_share_rates(self):
        params = ModelParams(lam=1.0, mu=0.0, omega=(1.0, 0.8), kpred=(1.0, 1.0))
        state = SystemState.constant(self.grid, StatePoint(w=(1.0, 1.0), u=1.0))
        with self.assertRaises(ParamError):
            population_identities(self.grid, params, state)


class LayoutTestCase(SimpleTestCase):
    def test_dichotomy(self):
        params = SymmetricPairFactory()
        grid = IntervalFactory()
        crowded = SystemState.constant(grid, StatePoint(w=(1.0, 1.0), u=2.0))
        verdict = dichotomy_check(params, grid, crowded, n_bar=1)
        self.assertEqual(verdict.nonzero_components, 2)
        self.assertFalse(verdict.consistent)
        self.assertAlmostEqual(verdict.distance_to_prey_only, 0.9)

        faint = SystemState.constant(grid, StatePoint(w=(1e-5, 1e-5), u=20.0))
        self.assertTrue(dichotomy_check(params, grid, faint, n_bar=1).consistent)

    def test_block_seed(self):
        params = SymmetricPairFactory()
        grid = IntervalFactory()
        seed = block_seed(params, grid, 2)
        np.testing.assert_allclose(seed.w[0][:64], 0.95)
        np.testing.assert_array_equal(seed.w[0][64:], 0.0)
        np.testing.assert_allclose(seed.w[1][64:], 0.95)
        np.testing.assert_array_equal(seed.u, 1.0)

    def test_reflect_half_solution(self):
        grid = build_grid(1, [(0.0, 1.0)], 8)
        x, = grid.axes
        half = SystemState(grid=grid, w=[x], u=1.0 + x)
        full = reflect_half_solution(half)
        self.assertEqual(full.grid.extents, ((-1.0, 1.0),))
        np.testing.assert_array_equal(full.w[0][:8], 0.0)
        np.testing.assert_array_equal(full.w[1][:8], x[::-1])
        np.testing.assert_array_equal(full.u, np.concatenate([(1.0 + x)[::-1], 1.0 + x]))

    def test_half_system_needs_a_viable_predator(self):
        params = ModelParams.symmetric_pair(lam=1.0, mu=0.05, omega=25.0, kpred=1.0)
        with self.assertRaises(ParamError):
            solve_half_system_1d(params, 1.0, n_cells=16)


class OptimizePacksTestCase(SimpleTestCase):
    def setUp(self):
        self.params = SymmetricPairFactory()
        self.grid = IntervalFactory()

    def test_rejects_bad_requests(self):
        mixed = ModelParams(lam=1.0, mu=0.05, omega=(1.0, 0.8), kpred=(1.0, 1.0))
        with self.assertRaises(ParamError):
            optimize_packs(mixed, self.grid, 2, [1.0])
        with self.assertRaises(ParamError):
            optimize_packs(self.params, self.grid, 0, [1.0])
        with self.assertRaises(ParamError):
            optimize_packs(self.params, self.grid, 2, [])
        with self.assertRaises(ParamError) as ctx:
            optimize_packs(self.params, self.grid, 7, [1.0])
        self.assertEqual(ctx.exception.field, 'n_max')

    @patch('apps.packs.services.solve_cell', side_effect=fake_cell)
    def test_best_cell_at_the_top_of_the_grid(self, mock_solve):
        report = optimize_packs(self.params, self.grid, 2, [5.0, 1.0])
        self.assertEqual(mock_solve.call_count, 4)
        self.assertEqual((report.best.n, report.best.beta), (2, 5.0))
        self.assertEqual(report.alternative, 'SUPREMUM_ALONG_BETA')
        self.assertEqual(report.n_bar, 5)
        self.assertIsNone(report.identity_residuals)
        self.assertEqual(len(OptimReportSerializer(report).data['candidates']), 4)

    @patch('apps.packs.services.solve_cell')
    def test_unphysical_cells_are_skipped(self, mock_solve):
        def cell(params, grid, n, beta, t_max=200.0, newton_tol=None):
            candidate = fake_cell(params, grid, n, 10.0 - beta)
            return PackCandidate(n=n, beta=beta, population=candidate.population,
                                 physical=n == 1, converged=True, positive_count=n)

        mock_solve.side_effect = cell
        report = optimize_packs(self.params, self.grid, 2, [1.0, 5.0])
        self.assertEqual((report.best.n, report.best.beta), (1, 1.0))
        self.assertEqual(report.alternative, 'MAXIMUM_ATTAINED')

    @override_settings(PREDPACK_PACKS_DISPATCH='celery')
    @patch('celery.group')
    def test_celery_dispatch(self, mock_group):
        results = [candidate_to_dict(fake_cell(self.params, self.grid, n, b))
                   for n in (1, 2) for b in (1.0, 5.0)]
        mock_group.return_value.apply_async.return_value.get.return_value = results
        report = optimize_packs(self.params, self.grid, 2, [1.0, 5.0])
        mock_group.assert_called_once()
        self.assertEqual(len(report.candidates), 4)
        self.assertEqual(report.best.population, 25.0)

    @patch('apps.packs.services.solve_cell')
    def test_collapsed_cells_compete_under_their_surviving_count(self, mock_solve):
        def cell(params, grid, n, beta, t_max=200.0, newton_tol=None):
            # two blocks collapse onto one pack a hair above the single-pack population
            return PackCandidate(n=1, beta=beta, population=0.8 + (1e-12 if n == 2 else 0.0),
                                 physical=True, converged=True, positive_count=1,
                                 requested_n=2 if n == 2 else None)

        mock_solve.side_effect = cell
        report = optimize_packs(self.params, self.grid, 2, [10.0, 100.0])
        self.assertEqual((report.best.n, report.best.seeded_n, report.best.beta), (1, 1, 10.0))
        self.assertEqual(report.alternative, 'MAXIMUM_ATTAINED')
        data = OptimReportSerializer(report).data
        self.assertEqual([c['requested_n'] for c in data['candidates']], [1, 1, 2, 2])
        self.assertEqual({c['n'] for c in data['candidates']}, {1})

    @patch('apps.packs.services.solve_cell', side_effect=fake_cell)
    def test_newton_tolerance_reaches_every_cell(self, mock_solve):
        optimize_packs(self.params, self.grid, 1, [1.0], newton_tol=1e-9)
        self.assertEqual(mock_solve.call_args[0][4:], (200.0, 1e-9))


class SolvePackCellTaskTestCase(SimpleTestCase):
    @patch('apps.packs.services.solve_cell', side_effect=fake_cell)
    def test_task_returns_a_json_ready_candidate(self, mock_solve):
        params = SymmetricPairFactory()
        grid = IntervalFactory()
        data = solve_pack_cell(params.to_dict(), grid.to_dict(), 2, 3.0)
        self.assertEqual(data['population'], 23.0)
        self.assertIsNone(data['state'])
        args = mock_solve.call_args[0]
        self.assertEqual(args[0], params)
        self.assertEqual(args[2:], (2, 3.0, 200.0, None))


def test_population_curves_leave_failed_cells_blank():
    candidates = [PackCandidate(n=1, beta=0.5, population=1.0, physical=True, converged=True,
                                positive_count=1),
                  PackCandidate(n=1, beta=1.0, population=2.0, physical=True, converged=True,
                                positive_count=1),
                  PackCandidate(n=2, beta=0.5, population=None, physical=False, converged=False,
                                positive_count=0, error='no convergence'),
                  PackCandidate(n=1, beta=1.0, population=3.0, physical=True, converged=True,
                                positive_count=1, requested_n=2)]
    report = OptimReport(candidates=candidates, best=candidates[-1], alternative='MAXIMUM_ATTAINED')
    with tempfile.TemporaryDirectory() as tmp:
        write_population_curves(Path(tmp) / 'population.csv', report)
        header, data = read_population_curves(Path(tmp) / 'population.csv')
    assert header == ['beta', 'P_N1', 'P_N2']
    np.testing.assert_array_equal(data, [[0.5, 1.0, np.nan], [1.0, 2.0, 3.0]])


def test_pick_best_prefers_fewer_predators_within_the_tie_band():
    def candidate(n, beta, value, **kwargs):
        return PackCandidate(n=n, beta=beta, population=value, physical=True, converged=True,
                             positive_count=n, **kwargs)

    one = candidate(1, 5.0, 2.0)
    assert pick_best([candidate(2, 1.0, 2.0 + 1e-11), one]) is one
    clear = candidate(2, 1.0, 2.0 + 1e-6)
    assert pick_best([one, clear]) is clear
    assert pick_best([candidate(0, 1.0, 0.0, requested_n=2)]) is None


def test_collapsed_candidate_keeps_its_seed_count_through_a_worker():
    grid = IntervalFactory()
    state = SystemState.constant(grid, StatePoint(w=(0.95,), u=1.0))
    collapsed = PackCandidate(n=1, beta=3.0, population=0.95 * math.pi, physical=True,
                              converged=True, positive_count=1, state=state, requested_n=2)
    back = candidate_from_dict(grid, candidate_to_dict(collapsed))
    assert (back.n, back.seeded_n, back.collapsed) == (1, 2, True)
    assert back.state.n_predators == 1


@pytest.mark.parametrize('ceiling', [4.0, 50.0, 1e3])
def test_doubling_the_domain_never_loses_a_pack(ceiling):
    params = unit_interval_params(ceiling)
    small = pack_bound(params, build_grid(1, [(0.0, 1.0)], 128))
    large = pack_bound(params, build_grid(1, [(0.0, 2.0)], 256))
    assert large.gamma_bar == small.gamma_bar
    assert large.n_bar_exact >= small.n_bar_exact


class RelaxTestCase(SimpleTestCase):
    def setUp(self):
        self.params = ModelParams.symmetric_pair(lam=1.0, mu=0.2, omega=1.0,
                                                 kpred=1.0).with_predators(1)
        self.grid = build_grid(1, [(0.0, 1.0)], 32)
        self.problem = SteadyStateProblem(self.params, self.grid)
        self.point = simple_point(self.params, 0)

    def test_stationary_start_stops_after_one_step(self):
        state = SystemState.constant(self.grid, self.point)
        self.assertLess(flow_norm(self.problem, state), 1e-12)
        relaxed = relax(self.params, state, t_max=50.0)
        self.assertLessEqual(relaxed.t, 1e-2 + 1e-12)

    def test_stops_once_the_flow_norm_is_below_tolerance(self):
        x, = self.grid.axes
        state = SystemState(grid=self.grid, w=[self.point.w[0] * (1 + 0.05 * np.cos(np.pi * x))],
                            u=np.full(self.grid.size, self.point.u))
        self.assertGreater(flow_norm(self.problem, state), 1e-3)
        relaxed = relax(self.params, state, t_max=500.0)
        self.assertLess(relaxed.t, 500.0)
        self.assertLess(flow_norm(self.problem, relaxed), STEADY_RATE_TOL)


class CollapsedPackTestCase(SimpleTestCase):
    """The unit interval with gamma_bar = 4 holds a single pack"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.params = ModelParams.symmetric_pair(lam=1.0, mu=0.2, omega=1.0, kpred=1.0)
        cls.grid = build_grid(1, [(0.0, 1.0)], 32)
        cls.report = optimize_packs(cls.params, cls.grid, 2, [10.0, 100.0])

    def test_pack_bound_is_one(self):
        self.assertEqual(self.report.n_bar, 1)

    def test_best_cell_holds_a_single_pack(self):
        best = self.report.best
        self.assertEqual(best.n, 1)
        self.assertEqual(best.state.n_predators, 1)
        self.assertAlmostEqual(best.population, 0.8, places=6)
        self.assertEqual(self.report.alternative, 'MAXIMUM_ATTAINED')

    def test_two_block_cells_obey_the_dichotomy(self):
        two_block = [c for c in self.report.candidates if c.seeded_n == 2]
        self.assertEqual(len(two_block), 2)
        for cell in two_block:
            self.assertTrue(cell.converged, cell.error)
            self.assertEqual(cell.n, cell.state.n_predators)
            verdict = dichotomy_check(self.params, self.grid, cell.state, self.report.n_bar)
            self.assertTrue(cell.positive_count < 2 or verdict.consistent)


@pytest.mark.slow
class PopulationGainTestCase(SimpleTestCase):
    def test_two_segregated_packs_beat_one(self):
        params = SymmetricPairFactory(mu=0.01)
        half = solve_half_system_1d(params, math.pi / 2, n_cells=128)
        self.assertTrue(half.converged and half.physical)
        state = reflect_half_solution(half.state)
        two_packs = population(state.grid, state)
        one_pack = params.viability[0] * math.pi
        self.assertGreater(two_packs, params.lam / params.kpred[0] * math.pi)
        self.assertGreater(two_packs, one_pack)
        residuals = population_identities(state.grid, params, state)
        self.assertLess(abs(residuals.first), 1e-3 * two_packs)

    def test_optimizer_without_prey_limitation_satisfies_the_identities(self):
        params = SymmetricPairFactory(mu=0.0)
        grid = build_grid(1, [(0.0, math.pi)], 64)
        report = optimize_packs(params, grid, 2, [5.0, 10.0], t_max=100.0)
        self.assertIsNotNone(report.best)
        self.assertGreaterEqual(report.best.population, math.pi * (1 - 1e-6))
        self.assertLess(report.identity_residuals.worst, 1e-3 * report.best.population)
