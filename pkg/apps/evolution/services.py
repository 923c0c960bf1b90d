import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from django.conf import settings

from apps.core.exceptions import FitError, GridError, ParamError, StepError
from apps.core.params import ModelParams, StatePoint
from apps.core.services import invariant_box, lipschitz_bound, reaction_arrays
from apps.grids.services import Grid, gradient_norm

logger = logging.getLogger(__name__)

PHYSICAL_FLOOR = 1e-12
UNDERSHOOT_TOL = 1e-8
FIT_FLOOR = 1e-13


@dataclass(frozen=True, eq=False)
class SystemState:
    """Predator fields ``w`` (shape (N, nodes)) and prey field ``u`` on one grid"""

    grid: Grid
    w: np.ndarray
    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        u = np.asarray(self.u, dtype=float)
        if w.shape[1] != self.grid.size or u.shape != (self.grid.size,):
            raise GridError(
                f"state fields {w.shape}/{u.shape} do not match a grid of {self.grid.size} nodes")
        object.__setattr__(self, 'w', w)
        object.__setattr__(self, 'u', u)
        object.__setattr__(self, 't', float(self.t))

    @classmethod
    def constant(cls, grid: Grid, point: StatePoint, t=0.0):
        w = np.outer(np.asarray(point.w), np.ones(grid.size))
        return cls(grid=grid, w=w, u=np.full(grid.size, point.u), t=t)

    @classmethod
    def from_vector(cls, grid: Grid, vector, t=0.0):
        """Inverse of :meth:`as_vector` (component-major layout)"""
        parts = np.asarray(vector, dtype=float).reshape(-1, grid.size)
        return cls(grid=grid, w=parts[:-1].copy(), u=parts[-1].copy(), t=t)

    @property
    def n_predators(self):
        return self.w.shape[0]

    @property
    def fields(self):
        return list(self.w) + [self.u]

    def as_vector(self):
        return np.concatenate([self.w.ravel(), self.u])

    def is_physical(self, tol=PHYSICAL_FLOOR):
        return bool(min(self.w.min(), self.u.min()) >= -tol)

    def means(self):
        return np.array([f.mean() for f in self.fields])

    def sups(self):
        return np.array([np.abs(f).max() for f in self.fields])

    def swapped(self, i=0, j=1):
        w = self.w.copy()
        w[[i, j]] = w[[j, i]]
        return replace(self, w=w)

    def at_time(self, t):
        return replace(self, t=t)


class ImexEulerStepper:
    """Implicit diffusion, explicit reaction.

    Each component diffuses through its own operator (the grid's Neumann
    Laplacian unless ``operators`` says otherwise). Factorizations are kept per
    (component, dt) in a small LRU cache.
    """

    CACHE_SIZE = 16

    def __init__(self, params: ModelParams, grid: Grid, include_reaction=True, operators=None,
                 max_halvings=None):
        self.params = params
        self.grid = grid
        self.include_reaction = include_reaction
        n = params.n_components
        self.operators = list(operators) if operators is not None else [grid.laplacian] * n
        if len(self.operators) != n:
            raise GridError(f"need {n} diffusion operators, got {len(self.operators)}")
        self.max_halvings = max_halvings if max_halvings is not None else getattr(
            settings, 'PREDPACK_EVOLVE_MAX_HALVINGS', 20)
        self._factors = OrderedDict()

    def _factor(self, component, dt):
        key = (component, dt)
        if key in self._factors:
            self._factors.move_to_end(key)
            return self._factors[key]
        d = self.params.diffusivities[component]
        matrix = sp.identity(self.grid.size, format='csc') - dt * d * self.operators[component]
        lu = splu(sp.csc_matrix(matrix))
        self._factors[key] = lu
        if len(self._factors) > self.CACHE_SIZE:
            self._factors.popitem(last=False)
        return lu

    def advance(self, state: SystemState, dt):
        """One unguarded IMEX Euler step"""
        w, u = state.w, state.u
        if self.include_reaction:
            fw, fu = reaction_arrays(self.params, w, u)
            w = w + dt * fw
            u = u + dt * fu
        explicit = list(w) + [u]
        solved = [self._factor(c, dt).solve(rhs) for c, rhs in enumerate(explicit)]
        return SystemState(grid=state.grid, w=np.array(solved[:-1]), u=solved[-1], t=state.t + dt)

    def _undershoots(self, state):
        for f in state.fields:
            if f.min() < -UNDERSHOOT_TOL * (1.0 + np.abs(f).max()):
                return True
        return False

    def step(self, state: SystemState, dt) -> Tuple[SystemState, float]:
        """Step with rejection: halve dt on negative undershoot. Returns (state, dt used)."""
        if not dt > 0:
            raise StepError(f"dt must be positive, got {dt}")
        trial = dt
        for _ in range(self.max_halvings + 1):
            candidate = self.advance(state, trial)
            if np.all(np.isfinite(candidate.as_vector())) and not self._undershoots(candidate):
                return candidate, trial
            logger.debug(f"step rejected at t={state.t:.6g}, dt={trial:.3g}")
            trial = trial / 2.0
        raise StepError(
            f"step rejected {self.max_halvings} times at t={state.t:.6g} (last dt={2 * trial:.3g})")


@lru_cache(maxsize=8)
def _stepper_for(params: ModelParams, grid: Grid):
    return ImexEulerStepper(params, grid)


def step(params: ModelParams, state: SystemState, dt) -> SystemState:
    new_state, _ = _stepper_for(params, state.grid).step(state, dt)
    return new_state


def default_dt(params: ModelParams, grid: Grid):
    return 0.25 * min(grid.spacing) ** 2 / params.diffusivities.max()


@dataclass(frozen=True)
class EvolveSample:
    t: float
    means: Tuple[float, ...]
    sups: Tuple[float, ...]
    gradient_norms: Tuple[float, ...]

    @property
    def gradient_sum(self):
        return float(sum(self.gradient_norms))


@dataclass(frozen=True)
class BoundViolation:
    t: float
    component: int
    value: float
    bound: float


class BoundMonitor:
    """Absorbing-region bounds plus a margin; unbounded components are skipped"""

    def __init__(self, params: ModelParams, epsilon=1e-2):
        box = invariant_box(params)
        self.epsilon = epsilon
        self.bounds = list(box.w_bounds) + [box.u_bound]
        skipped = [i for i, b in enumerate(self.bounds) if b is None]
        if skipped:
            logger.warning(f"no absorbing bound for components {skipped}; not monitored")

    def check(self, sample: EvolveSample) -> List[BoundViolation]:
        return [BoundViolation(sample.t, c, value, bound + self.epsilon)
                for c, (value, bound) in enumerate(zip(sample.sups, self.bounds))
                if bound is not None and value > bound + self.epsilon]


@dataclass
class EvolveReport:
    samples: List[EvolveSample]
    bound_violations: List[BoundViolation]
    transient_time: Optional[float]
    fitted_decay_rate: Optional[float]
    final_state: SystemState = field(repr=False)
    sigma: Optional[float] = None
    sigma_prime: Optional[float] = None
    snapshot_files: List[str] = field(default_factory=list)

    @property
    def times(self):
        return np.array([s.t for s in self.samples])

    @property
    def gradient_sums(self):
        return np.array([s.gradient_sum for s in self.samples])


def sample_state(state: SystemState) -> EvolveSample:
    return EvolveSample(
        t=state.t,
        means=tuple(float(m) for m in state.means()),
        sups=tuple(float(s) for s in state.sups()),
        gradient_norms=tuple(gradient_norm(state.grid, f) for f in state.fields),
    )


def detect_transient(samples, monitors, window=10):
    """Time of the first sample from which every monitor holds for ``window`` samples"""
    ok = [not any(m.check(s) for m in monitors) for s in samples]
    run = 0
    for index, flag in enumerate(ok):
        run = run + 1 if flag else 0
        if run == window:
            return samples[index - window + 1].t
    return None


def run(params: ModelParams, state0: SystemState, t_end, sample_every, monitors=None,
        transient=None, window=10, dt0=None, dt_max=None, snapshot_every=None,
        snapshot_dir=None, stepper=None, sigma=None, sigma_prime=None) -> EvolveReport:
    """Integrate to ``t_end`` with adaptive dt, sampling every ``sample_every``.

    Bound violations are reported from the transient time on; when ``transient``
    is None it is detected as the start of the first ``window`` consecutive
    clean samples.
    """
    if not t_end > 0 or not sample_every > 0:
        raise StepError("t_end and sample_every must be positive")
    if not state0.is_physical():
        raise StepError("initial state has negative densities")
    stepper = stepper or ImexEulerStepper(params, state0.grid)
    monitors = [BoundMonitor(params)] if monitors is None else list(monitors)
    dt_max = dt_max or getattr(settings, 'PREDPACK_EVOLVE_DT_MAX', 1e-2)
    dt = min(dt0 or default_dt(params, state0.grid), dt_max)

    from .exporters import write_state_csv

    state = state0.at_time(0.0)
    samples = [sample_state(state)]
    snapshot_files = []
    next_sample = sample_every
    steps = 0
    while state.t < t_end * (1 - 1e-12):
        target = min(next_sample, t_end)
        trial = min(dt, target - state.t)
        state, used = stepper.step(state, trial)
        steps += 1
        dt = used if used < trial else min(1.5 * dt, dt_max)
        if state.t >= target - 1e-12 * max(1.0, target):
            state = state.at_time(target)
            samples.append(sample_state(state))
            next_sample = target + sample_every
            if snapshot_dir and snapshot_every and (len(samples) - 1) % snapshot_every == 0:
                name = f'snapshot_{len(samples) - 1:05d}.csv'
                write_state_csv(Path(snapshot_dir) / name, state)
                snapshot_files.append(name)

    if transient is None:
        transient = detect_transient(samples, monitors, window)
    violations = [v for s in samples for m in monitors for v in m.check(s)
                  if transient is None or s.t >= transient]
    if violations:
        logger.warning(f"{len(violations)} bound violations after t={transient}")

    times = np.array([s.t for s in samples])
    sums = np.array([s.gradient_sum for s in samples])
    try:
        rate = fit_decay_rate(times, sums)
    except FitError:
        rate = None
    logger.info(f"evolved to t={state.t:.6g} in {steps} steps, {len(samples)} samples")
    return EvolveReport(samples=samples, bound_violations=violations, transient_time=transient,
                        fitted_decay_rate=rate, final_state=state, sigma=sigma,
                        sigma_prime=sigma_prime, snapshot_files=snapshot_files)


def fit_decay_rate(times, values, fraction=0.5, floor=FIT_FLOOR):
    """Least-squares slope of log(values) against t on the trailing ``fraction``.

    Values below ``floor`` are dropped; returns None when nothing is left.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise FitError("cannot fit an exponential rate to negative data")
    start = int(len(values) * (1.0 - fraction))
    t, v = times[start:], values[start:]
    keep = v > floor
    if keep.sum() < 2:
        return None
    return float(np.polyfit(t[keep], np.log(v[keep]), 1)[0])


@dataclass(frozen=True)
class HomogenizationVerdict:
    passed: bool
    fitted_rate: Optional[float]
    required_rate: float
    tail_samples: int


def homogenization_check(report: EvolveReport, sigma_prime, fraction=0.5, slack=0.1):
    """Pass iff the gradient-norm sum decays at least at rate (1 - slack) sigma_prime"""
    if not sigma_prime > 0:
        raise FitError("sigma_prime must be positive")
    tail = len(report.samples) - int(len(report.samples) * (1.0 - fraction))
    if tail < 10:
        raise FitError(f"need at least 10 tail samples, have {tail}")
    rate = fit_decay_rate(report.times, report.gradient_sums, fraction)
    required = -sigma_prime * (1.0 - slack)
    passed = True if rate is None else rate <= required
    return HomogenizationVerdict(passed=passed, fitted_rate=rate, required_rate=required,
                                 tail_samples=tail)


@dataclass(frozen=True)
class SigmaCriterion:
    sigma: float
    d: float
    gamma1: float
    lipschitz: float


def sigma_criterion(params: ModelParams, spectrum, lipschitz=None) -> SigmaCriterion:
    """sigma = d gamma_1 - L with d the smallest diffusivity"""
    if lipschitz is None:
        lipschitz = lipschitz_bound(params)
    d = float(params.diffusivities.min())
    gamma1 = float(spectrum.first_positive())
    return SigmaCriterion(sigma=d * gamma1 - lipschitz, d=d, gamma1=gamma1, lipschitz=lipschitz)


@dataclass(frozen=True, eq=False)
class OdeTrajectory:
    times: np.ndarray
    values: np.ndarray  # (samples, N+1), last column is the prey

    @property
    def final(self):
        return StatePoint.from_array(self.values[-1])


def _rk4(rhs, y, t, dt):
    k1 = rhs(t, y)
    k2 = rhs(t + dt / 2, y + dt / 2 * k1)
    k3 = rhs(t + dt / 2, y + dt / 2 * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def ode_trajectory(params: ModelParams, means0, t_end, dt=5e-3) -> OdeTrajectory:
    """Classic RK4 for the spatially homogeneous system"""
    y = means0.as_array() if isinstance(means0, StatePoint) else np.asarray(means0, dtype=float)
    if y.shape != (params.n_components,) or np.any(y < 0):
        raise ParamError("initial means must be N+1 nonnegative values", field='means0')
    n = params.n_predators

    def rhs(_, values):
        fw, fu = reaction_arrays(params, values[:n], values[n])
        return np.append(fw, fu)

    steps = max(1, int(np.ceil(t_end / dt)))
    h = t_end / steps
    times = np.linspace(0.0, t_end, steps + 1)
    values = np.empty((steps + 1, y.size))
    values[0] = y
    for i in range(steps):
        y = _rk4(rhs, y, times[i], h)
        if not np.all(np.isfinite(y)) or np.abs(y).max() > 1e12:
            raise StepError(f"ODE trajectory blew up at t={times[i + 1]:.6g}")
        values[i + 1] = y
    return OdeTrajectory(times=times, values=values)


@dataclass(frozen=True, eq=False)
class ComparisonEnvelope:
    times: np.ndarray
    u: np.ndarray
    w: np.ndarray  # (samples, N)


def comparison_envelope(params: ModelParams, state0: SystemState, times, dt=5e-3):
    """Spatially constant supersolutions dominating sup u and sup w_i.

    U solves the prey logistic from max(lambda/mu, sup u0); W_i solves
    W' = (-omega_i + k_i U - mu_i W) W from max(bound_i, sup w_i0).
    """
    if params.mu == 0:
        raise ParamError("the comparison envelope needs mu > 0", field='mu')
    times = np.asarray(times, dtype=float)
    cap = params.lam / params.mu
    u0 = max(cap, float(state0.u.max()))

    def big_u(t):
        return cap / (1.0 + (cap / u0 - 1.0) * np.exp(-params.lam * t))

    box = invariant_box(params)
    w0 = np.array([max(b or 0.0, float(state0.w[i].max())) for i, b in enumerate(box.w_bounds)])
    k, omega, mu_self = params.k_array, params.omega_array, params.mu_self_array

    def rhs(t, w):
        return (-omega + k * big_u(t) - mu_self * w) * w

    out = np.empty((times.size, params.n_predators))
    t, w = 0.0, w0
    for index, target in enumerate(times):
        while t < target - 1e-14:
            h = min(dt, target - t)
            w = _rk4(rhs, w, t, h)
            t += h
        out[index] = w
    return ComparisonEnvelope(times=times, u=big_u(times), w=out)
