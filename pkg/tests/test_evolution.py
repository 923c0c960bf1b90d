import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
from django.test import SimpleTestCase

from apps.core.exceptions import FitError, GridError, ParamError, StepError
from apps.core.params import ModelParams, StatePoint
from apps.equilibria.services import distance_to_constant, simple_point, symmetric_point
from apps.evolution.exporters import (
    read_samples_csv, read_state_csv, write_samples_csv, write_state_csv,
)
from apps.evolution.services import (
    BoundMonitor, EvolveSample, ImexEulerStepper, SystemState, comparison_envelope,
    fit_decay_rate, homogenization_check, ode_trajectory, run, sigma_criterion, step,
)
from apps.grids.services import build_grid, integrate, neumann_spectrum

from .factories import IntervalFactory, SymmetricPairFactory


def rippled(grid, point, amplitude=0.1):
    x, = grid.axes
    (a, b), = grid.extents
    shape = 1.0 + amplitude * np.cos(math.pi * (x - a) / (b - a))
    state = SystemState.constant(grid, point)
    return SystemState(grid=grid, w=state.w * shape, u=state.u * shape)


class SystemStateTestCase(SimpleTestCase):
    def test_shape_checked(self):
        with self.assertRaises(GridError):
            SystemState(grid=IntervalFactory(), w=np.ones((2, 5)), u=np.ones(128))

    def test_vector_layout_is_component_major(self):
        grid = build_grid(1, [(0.0, 1.0)], 4)
        state = SystemState(grid=grid, w=[[1, 2, 3, 4], [5, 6, 7, 8]], u=[9, 10, 11, 12])
        np.testing.assert_array_equal(state.as_vector(), np.arange(1, 13))
        np.testing.assert_array_equal(SystemState.from_vector(grid, np.arange(1, 13)).u,
                                      [9, 10, 11, 12])

    def test_swapped(self):
        grid = build_grid(1, [(0.0, 1.0)], 4)
        state = SystemState.constant(grid, StatePoint(w=(1.0, 2.0), u=3.0)).swapped()
        self.assertEqual(state.means().tolist(), [2.0, 1.0, 3.0])


class ImexEulerStepperTestCase(SimpleTestCase):
    def setUp(self):
        self.params = SymmetricPairFactory(beta=1.0)
        self.grid = IntervalFactory()

    def test_constant_root_is_preserved(self):
        state = SystemState.constant(self.grid, symmetric_point(self.params))
        stepper = ImexEulerStepper(self.params, self.grid)
        for _ in range(10):
            state, _ = stepper.step(state, 1e-2)
        np.testing.assert_allclose(state.means(), symmetric_point(self.params).as_array(),
                                   atol=1e-10)

    def test_pure_diffusion_conserves_mass(self):
        state = rippled(self.grid, StatePoint(w=(1.0, 0.5), u=2.0), amplitude=0.5)
        stepper = ImexEulerStepper(self.params, self.grid, include_reaction=False)
        before = [integrate(self.grid, f) for f in state.fields]
        for _ in range(20):
            state, _ = stepper.step(state, 5e-2)
        after = [integrate(self.grid, f) for f in state.fields]
        np.testing.assert_allclose(after, before, rtol=1e-12)

    def test_prey_alone_follows_the_logistic_curve(self):
        grid = build_grid(1, [(0.0, 1.0)], 8)
        state = SystemState(grid=grid, w=np.zeros((2, grid.size)), u=np.ones(grid.size))
        for _ in range(5000):
            state = step(self.params, state, 1e-3)
        cap = 20.0
        expected = cap / (1.0 + (cap - 1.0) * math.exp(-5.0))
        self.assertAlmostEqual(state.t, 5.0)
        np.testing.assert_allclose(state.u, expected, rtol=1e-3)
        np.testing.assert_array_equal(state.w, 0.0)

    def test_factorizations_are_cached(self):
        stepper = ImexEulerStepper(self.params, self.grid)
        state = SystemState.constant(self.grid, StatePoint(w=(1.0, 1.0), u=1.0))
        stepper.step(state, 1e-3)
        stepper.step(state, 1e-3)
        self.assertEqual(len(stepper._factors), 3)

    def test_rejects_nonpositive_dt(self):
        with self.assertRaises(StepError):
            ImexEulerStepper(self.params, self.grid).step(
                SystemState.constant(self.grid, StatePoint(w=(1.0, 1.0), u=1.0)), 0.0)


class RunTestCase(SimpleTestCase):
    def setUp(self):
        self.params = SymmetricPairFactory(mu_self=1.0)
        self.grid = build_grid(1, [(0.0, 1.0)], 32)

    def test_sample_times(self):
        state0 = rippled(self.grid, StatePoint(w=(0.5, 0.5), u=2.0))
        report = run(self.params, state0, 1.0, 0.1)
        np.testing.assert_allclose(report.times, np.linspace(0.0, 1.0, 11), atol=1e-12)
        self.assertAlmostEqual(report.final_state.t, 1.0)

    def test_snapshots(self):
        state0 = rippled(self.grid, StatePoint(w=(0.5, 0.5), u=2.0))
        with tempfile.TemporaryDirectory() as tmp:
            report = run(self.params, state0, 0.4, 0.1, snapshot_every=2, snapshot_dir=tmp)
            self.assertEqual(report.snapshot_files, ['snapshot_00002.csv', 'snapshot_00004.csv'])
            self.assertTrue((Path(tmp) / 'snapshot_00004.csv').is_file())

    def test_perturbed_simple_solution_returns(self):
        params = ModelParams.symmetric_pair(lam=1.0, mu=0.2, omega=1.0, kpred=1.0, beta=1.0)
        point = simple_point(params, 0)
        x, = self.grid.axes
        ripple = 1e-3 * np.cos(math.pi * x)
        invader = 1e-3 * (1.0 + np.cos(math.pi * x))
        state0 = SystemState(grid=self.grid, w=[point.w[0] + ripple, invader], u=point.u + ripple)
        report = run(params, state0, 150.0, 5.0)
        self.assertLess(distance_to_constant(report.final_state, point), 1e-6)

    def test_invalid_arguments(self):
        state0 = SystemState.constant(self.grid, StatePoint(w=(0.5, 0.5), u=2.0))
        with self.assertRaises(StepError):
            run(self.params, state0, 0.0, 0.1)
        negative = SystemState(grid=self.grid, w=-state0.w, u=state0.u)
        with self.assertRaises(StepError):
            run(self.params, negative, 1.0, 0.1)


class MonitorTestCase(SimpleTestCase):
    def test_bounds_with_margin(self):
        params = SymmetricPairFactory(mu_self=1.0)
        monitor = BoundMonitor(params, epsilon=0.5)
        sample = EvolveSample(t=1.0, means=(0, 0, 0), sups=(19.4, 19.6, 20.0),
                              gradient_norms=(0, 0, 0))
        violations = monitor.check(sample)
        self.assertEqual([v.component for v in violations], [1])
        self.assertAlmostEqual(violations[0].bound, 19.5)

    def test_unbounded_components_are_skipped(self):
        monitor = BoundMonitor(SymmetricPairFactory())
        sample = EvolveSample(t=0.0, means=(0, 0, 0), sups=(1e6, 1e6, 1.0),
                              gradient_norms=(0, 0, 0))
        self.assertEqual(monitor.check(sample), [])


class DecayFitTestCase(SimpleTestCase):
    def test_recovers_exponential_rate(self):
        t = np.linspace(0.0, 5.0, 51)
        self.assertAlmostEqual(fit_decay_rate(t, 3.0 * np.exp(-2.0 * t)), -2.0, places=10)

    def test_values_below_the_floor_are_dropped(self):
        t = np.linspace(0.0, 1.0, 10)
        self.assertIsNone(fit_decay_rate(t, np.zeros(10)))

    def test_negative_data(self):
        with self.assertRaises(FitError):
            fit_decay_rate([0.0, 1.0], [1.0, -1.0])


class OdeTestCase(SimpleTestCase):
    def test_logistic_prey_matches_closed_form(self):
        params = SymmetricPairFactory()
        trajectory = ode_trajectory(params, StatePoint(w=(0.0, 0.0), u=1.0), 2.0)
        cap = 20.0
        expected = cap / (1.0 + (cap - 1.0) * math.exp(-2.0))
        self.assertAlmostEqual(trajectory.values[-1, 2], expected, places=7)

    def test_symmetric_coexistence_splits_at_rate_beta_w(self):
        params = SymmetricPairFactory(beta=10.0)
        point = symmetric_point(params)
        delta = 1e-6
        trajectory = ode_trajectory(params, [point.w[0] + delta, point.w[1] - delta, point.u], 2.0)
        gap = np.abs(trajectory.values[:, 0] - trajectory.values[:, 1])
        rate = np.polyfit(trajectory.times, np.log(gap), 1)[0]
        self.assertAlmostEqual(rate / (params.beta * point.w[0]), 1.0, delta=0.1)

    def test_rejects_negative_means(self):
        with self.assertRaises(ParamError):
            ode_trajectory(SymmetricPairFactory(), [-1.0, 0.0, 1.0], 1.0)

    def test_envelope_dominates(self):
        params = SymmetricPairFactory(mu_self=1.0)
        grid = build_grid(1, [(0.0, 1.0)], 32)
        state0 = rippled(grid, StatePoint(w=(30.0, 10.0), u=35.0))
        report = run(params, state0, 2.0, 0.1)
        envelope = comparison_envelope(params, state0, report.times)
        sups = np.array([s.sups for s in report.samples])
        self.assertTrue(np.all(sups[:, 2] <= envelope.u * (1 + 1e-6)))
        self.assertTrue(np.all(sups[:, :2] <= envelope.w * (1 + 1e-6)))


class SigmaTestCase(SimpleTestCase):
    def test_small_domain_has_positive_sigma(self):
        params = SymmetricPairFactory(mu_self=1.0)
        spectrum = neumann_spectrum(build_grid(1, [(0.0, 0.1)], 32), 4)
        criterion = sigma_criterion(params, spectrum, lipschitz=50.0)
        self.assertAlmostEqual(criterion.gamma1, (math.pi / 0.1) ** 2)
        self.assertGreater(criterion.sigma, 0)

    def test_homogenization_needs_enough_samples(self):
        params = SymmetricPairFactory(mu_self=1.0)
        grid = build_grid(1, [(0.0, 1.0)], 16)
        report = run(params, rippled(grid, StatePoint(w=(1.0, 1.0), u=1.0)), 0.5, 0.1)
        with self.assertRaises(FitError):
            homogenization_check(report, 1.0)


def test_state_and_sample_csv_are_readable():
    grid = build_grid(1, [(0.0, 1.0)], 16)
    params = SymmetricPairFactory(mu_self=1.0)
    report = run(params, rippled(grid, StatePoint(w=(1.0, 0.5), u=2.0)), 0.2, 0.1)
    with tempfile.TemporaryDirectory() as tmp:
        write_state_csv(Path(tmp) / 'state.csv', report.final_state)
        write_samples_csv(Path(tmp) / 'samples.csv', report.samples)
        state = read_state_csv(Path(tmp) / 'state.csv', grid)
        samples = read_samples_csv(Path(tmp) / 'samples.csv')
    np.testing.assert_array_equal(state.as_vector(), report.final_state.as_vector())
    assert [s.t for s in samples] == [s.t for s in report.samples]
    assert samples[-1].gradient_norms == report.samples[-1].gradient_norms


@pytest.mark.slow
class HomogenizationAcceptanceTestCase(SimpleTestCase):
    def test_small_domain_homogenizes_and_tracks_the_ode(self):
        params = SymmetricPairFactory(mu_self=1.0)
        grid = build_grid(1, [(0.0, 0.1)], 64)
        spectrum = neumann_spectrum(grid, 4)
        criterion = sigma_criterion(params, spectrum)
        self.assertGreater(criterion.sigma, 0)
        sigma_prime = criterion.sigma / 2

        state0 = rippled(grid, StatePoint(w=(1.0, 0.5), u=2.0))
        report = run(params, state0, 0.03, 5e-4, sigma=criterion.sigma, sigma_prime=sigma_prime)
        self.assertTrue(homogenization_check(report, sigma_prime).passed)

        ode = ode_trajectory(params, state0.means(), 0.03)
        gap = np.abs(ode.values[-1] - report.final_state.means()).max()
        self.assertLess(gap, 1e-3)

    def test_absorbing_region_and_extinction(self):
        params = ModelParams(lam=1.0, mu=0.05, omega=(1.0, 25.0), kpred=(1.0, 1.0),
                             mu_self=(1.0, 1.0))
        grid = build_grid(1, [(0.0, 1.0)], 32)
        state0 = rippled(grid, StatePoint(w=(38.0, 2.0), u=40.0))
        monitor = BoundMonitor(params, epsilon=1e-2)
        report = run(params, state0, 20.0, 0.1, monitors=[monitor])
        self.assertIsNotNone(report.transient_time)
        self.assertEqual(report.bound_violations, [])
        self.assertLess(report.final_state.sups()[1], 1e-4)
