import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import gamma as gamma_fn
from django.conf import settings

from apps.core.exceptions import DomainError, ParamError, PredpackError, SpectrumError
from apps.core.params import ModelParams
from apps.equilibria.services import (
    NewtonResult, NewtonSolver, SteadyStateProblem, simple_point, steady_newton,
)
from apps.evolution.services import ImexEulerStepper, SystemState, default_dt
from apps.grids.services import Grid, build_grid, gradient, integrate, modes_below

logger = logging.getLogger(__name__)

ZERO_COMPONENT = 1e-6
STEADY_RATE_TOL = 1e-6
PROXIMITY_TOL = 1e-2
TIE_BAND = 1e-10


def unit_ball_volume(n):
    """Volume of the unit ball in R^n (2 on the line, pi in the plane)"""
    return float(np.pi ** (n / 2) / gamma_fn(n / 2 + 1))


def gamma_from_one(spectrum, n):
    """n-th Neumann eigenvalue counted from 1, so gamma_from_one(s, 1) == 0"""
    if n < 1:
        raise SpectrumError(f"eigenvalues are counted from 1, got {n}")
    return spectrum.gamma(n - 1)


@dataclass(frozen=True)
class PackBoundReport:
    gamma_bar: float
    n_bar_exact: int
    n_bar_weyl: float
    n_bar_weyl_corrected: float
    unit_ball_volume: float
    dim: int
    measure: float

    def to_dict(self):
        return dict(self.__dict__)


def gamma_bar(params: ModelParams) -> float:
    if params.mu == 0:
        raise ParamError("gamma_bar undefined when mu = 0", field='mu')
    return float(max(params.viability / (np.asarray(params.d) * params.mu)))


def pack_bound(params: ModelParams, grid: Grid, spectrum=None) -> PackBoundReport:
    """Largest number of coexisting nonzero predators the domain can hold.

    The exact count uses eigenvalues below gamma_bar; the Weyl counts use the domain
    measure only (one term) and add the Neumann boundary term (corrected).
    """
    ceiling = gamma_bar(params)
    if not ceiling > 0:
        raise ParamError("no predator satisfies lambda k > mu omega", field='lambda')
    spectrum = spectrum if spectrum is not None else modes_below(grid, ceiling)
    n_exact = spectrum.count_below(ceiling)
    if n_exact == len(spectrum):
        raise SpectrumError(f"all {len(spectrum)} eigenvalues lie below gamma_bar={ceiling:.6g}")

    n = grid.dim
    volume = unit_ball_volume(n)
    weyl = volume / (2 * np.pi) ** n * grid.measure * ceiling ** (n / 2)
    boundary_term = (0.25 * unit_ball_volume(n - 1) / (2 * np.pi) ** (n - 1)
                     * grid.boundary_measure * ceiling ** ((n - 1) / 2))
    logger.info(f"gamma_bar={ceiling:.6g}: exact count {n_exact}, Weyl {weyl:.4g}")
    return PackBoundReport(gamma_bar=ceiling, n_bar_exact=n_exact, n_bar_weyl=float(weyl),
                           n_bar_weyl_corrected=float(weyl + boundary_term),
                           unit_ball_volume=volume, dim=n, measure=grid.measure)


def population(grid: Grid, state: SystemState) -> float:
    """P = ∫ Σ w_i"""
    return integrate(grid, state.w.sum(axis=0))


@dataclass(frozen=True)
class IdentityResiduals:
    population: float
    first_rhs: float
    first: float  # ∫W minus its prey-equation expression
    second: float  # ∫u minus its predator-equation expression

    @property
    def worst(self):
        return max(abs(self.first), abs(self.second))


def log_gradient_energy(grid: Grid, u) -> float:
    """∫ |∇ log u|² with second-order differences (one-sided at the ends)"""
    parts = gradient(grid, np.log(u))
    return integrate(grid, sum(p ** 2 for p in parts))


def population_identities(grid: Grid, params: ModelParams, state: SystemState) -> IdentityResiduals:
    """Integral identities for stationary states of predators sharing omega and k.

    ∫W = (lambda/k)|Ω| - (mu/k)∫u + (D/k)∫|∇ log u|², and
    lambda ∫u = omega ∫W + mu ∫u² + Σ mu_i ∫w_i² + beta Σ_ij a_ij ∫w_i w_j.
    """
    if len(set(params.omega)) != 1 or len(set(params.kpred)) != 1:
        raise ParamError("identities need predators sharing omega and k", field='omega')
    if state.u.min() <= 0:
        raise DomainError("log u needs a strictly positive prey density", field='u')
    lam, mu, omega, k, big_d = (params.lam, params.mu, params.omega[0], params.kpred[0],
                                params.dprey)

    total = population(grid, state)
    int_u = integrate(grid, state.u)
    first_rhs = (lam / k) * grid.measure - (mu / k) * int_u + (big_d / k) * log_gradient_energy(
        grid, state.u)
    saturation = sum(m * integrate(grid, w ** 2) for m, w in zip(params.mu_self, state.w))
    competition = sum(params.a[i][j] * integrate(grid, state.w[i] * state.w[j])
                      for i in range(state.n_predators) for j in range(state.n_predators)
                      if i != j)
    second_rhs = ((omega / lam) * first_rhs + (mu / lam) * integrate(grid, state.u ** 2)
                  + saturation / lam + (params.beta / lam) * competition)
    return IdentityResiduals(population=total, first_rhs=first_rhs, first=total - first_rhs,
                             second=int_u - second_rhs)


def verify_identities_mu0(grid: Grid, params: ModelParams, state: SystemState):
    """(first, second) identity residuals for a prey without self-limitation"""
    if params.mu != 0:
        raise ParamError("these identities assume mu = 0", field='mu')
    residuals = population_identities(grid, params, state)
    return residuals.first, residuals.second


def _single_predator(params):
    return ModelParams(lam=params.lam, mu=params.mu, omega=params.omega[:1],
                       kpred=params.kpred[:1], mu_self=params.mu_self[:1], d=params.d[:1],
                       dprey=params.dprey)


def half_operators(grid: Grid):
    """w vanishes at the left end, every other end is no-flux"""
    return [grid.laplacian_with('dirichlet', 'neumann'), grid.laplacian]


def solve_half_system_1d(params: ModelParams, a: float, n_cells=256, guess: SystemState = None,
                         evolve_time=None, solver=None) -> NewtonResult:
    """One pack on (0, a): predator 1 of ``params`` against the prey, w(0) = 0.

    Without a guess the start is the simple solution shaped by sin(pi x / 2a),
    relaxed by ``evolve_time`` (default 10) of time stepping before Newton.
    """
    half = _single_predator(params)
    grid = guess.grid if guess is not None else build_grid(1, [(0.0, a)], n_cells)
    operators = half_operators(grid)
    if guess is None:
        if not half.viability[0] > 0:
            raise ParamError("the predator is not viable; only trivial half solutions exist",
                             field='lambda')
        point = simple_point(half, 0)
        x, = grid.axes
        guess = SystemState(grid=grid, w=[point.w[0] * np.sin(np.pi * x / (2 * a))],
                            u=np.full(grid.size, point.u))
        evolve_time = 10.0 if evolve_time is None else evolve_time
    if evolve_time:
        guess = relax(half, guess, evolve_time, operators=operators)
    result = steady_newton(half, grid, guess, solver=solver, operators=operators)
    if not result.physical:
        logger.warning("half-system root has a negative component")
    return result


def reflect_half_solution(state: SystemState) -> SystemState:
    """Two-pack state on (-a, a): predator 1 on (0, a), its mirror image as predator 2"""
    grid = state.grid
    (left, right), = grid.extents
    full = build_grid(1, [(left - (right - left), right)], 2 * grid.n_cells[0])
    w, u = state.w[0], state.u
    zeros = np.zeros(grid.size)
    return SystemState(grid=full, w=[np.concatenate([zeros, w]), np.concatenate([w[::-1], zeros])],
                       u=np.concatenate([u[::-1], u]), t=state.t)


@dataclass(frozen=True)
class DichotomyVerdict:
    nonzero_components: int
    n_bar: int
    distance_to_prey_only: Optional[float]
    consistent: bool


def dichotomy_check(params: ModelParams, grid: Grid, state: SystemState, n_bar,
                    tol=ZERO_COMPONENT, proximity=PROXIMITY_TOL) -> DichotomyVerdict:
    """More than n_bar nonzero predators is only allowed close to (0, ..., 0, lambda/mu)"""
    nonzero = int(np.sum(np.abs(state.w).max(axis=1) >= tol))
    distance = None
    if params.mu > 0:
        level = params.lam / params.mu
        gap = max(np.abs(state.w).max(), np.abs(state.u - level).max())
        distance = float(gap / level)
    consistent = nonzero <= n_bar or (distance is not None and distance < proximity)
    return DichotomyVerdict(nonzero_components=nonzero, n_bar=int(n_bar),
                            distance_to_prey_only=distance, consistent=consistent)


def flow_norm(problem: SteadyStateProblem, state: SystemState) -> float:
    """L2(Ω) norm of the gradient-flow right-hand side diag(d)Δv + F(v)"""
    rhs = problem.residual(state.as_vector()).reshape(-1, state.grid.size)
    return float(np.sqrt(integrate(state.grid, (rhs ** 2).sum(axis=0))))


def relax(params: ModelParams, state: SystemState, t_max, tol=STEADY_RATE_TOL, operators=None):
    """Time-step until the flow norm drops below tol or t_max is reached"""
    stepper = ImexEulerStepper(params, state.grid, operators=operators)
    problem = SteadyStateProblem(params, state.grid, operators)
    dt_max = getattr(settings, 'PREDPACK_EVOLVE_DT_MAX', 1e-2)
    dt = min(default_dt(params, state.grid), dt_max)
    start = state.t
    while state.t - start < t_max:
        state, used = stepper.step(state, dt)
        if flow_norm(problem, state) < tol:
            break
        dt = used if used < dt else min(1.5 * dt, dt_max)
    logger.debug(f"relaxed to t={state.t - start:.4g}")
    return state


def block_seed(params: ModelParams, grid: Grid, n) -> SystemState:
    """n equal blocks along the first axis, predator i at simple-solution level on block i"""
    point = simple_point(params, 0)
    x = grid.nodes[:, 0]
    (left, right) = grid.extents[0]
    block = np.minimum(((x - left) / (right - left) * n).astype(int), n - 1)
    w = np.array([np.where(block == i, point.w[0], 0.0) for i in range(n)])
    return SystemState(grid=grid, w=w, u=np.full(grid.size, point.u))


@dataclass(frozen=True, eq=False)
class PackCandidate:
    """One optimizer cell.

    ``n`` counts the predators that survived the Newton polish; ``requested_n`` is
    the block count the cell was seeded with when some of them vanished.
    """

    n: int
    beta: float
    population: Optional[float]
    physical: bool
    converged: bool
    positive_count: int
    residual: Optional[float] = None
    state: Optional[SystemState] = field(default=None, repr=False)
    error: Optional[str] = None
    requested_n: Optional[int] = None

    @property
    def seeded_n(self):
        return self.requested_n if self.requested_n is not None else self.n

    @property
    def collapsed(self):
        return self.n < self.seeded_n

    def to_dict(self):
        return {'n': self.n, 'requested_n': self.seeded_n, 'beta': self.beta,
                'population': self.population, 'physical': self.physical,
                'converged': self.converged, 'positive_count': self.positive_count,
                'residual': self.residual, 'error': self.error}


def drop_vanishing(state: SystemState, tol=ZERO_COMPONENT) -> SystemState:
    """Keep the predators whose sup-norm reaches tol"""
    keep = np.abs(state.w).max(axis=1) >= tol
    return SystemState(grid=state.grid, w=state.w[keep].reshape(-1, state.grid.size),
                       u=state.u, t=state.t)


def solve_cell(params: ModelParams, grid: Grid, n, beta, t_max=200.0,
               newton_tol=None) -> PackCandidate:
    """Seed n blocks at competition beta, relax, polish with Newton and score by P.

    Predators below ZERO_COMPONENT after the polish are dropped and the reduced
    state is polished again, so the cell is reported under its surviving count.
    """
    solver = NewtonSolver(tol=newton_tol)
    cell = params.with_predators(n).with_beta(beta)
    try:
        state = relax(cell, block_seed(cell, grid, n), t_max)
        result = steady_newton(cell, grid, state, strict=False, solver=solver)
        survivors = drop_vanishing(result.state)
        positive = survivors.n_predators
        if 0 < positive < n:
            logger.info(f"cell N={n}, beta={beta:g} kept only {positive} nonzero predators")
            reduced = params.with_predators(positive).with_beta(beta)
            result = steady_newton(reduced, grid, survivors, strict=False, solver=solver)
    except PredpackError as e:
        logger.warning(f"cell N={n}, beta={beta:g} failed: {e}")
        return PackCandidate(n=n, beta=beta, population=None, physical=False, converged=False,
                             positive_count=0, error=str(e))
    if positive == 0:
        logger.info(f"cell N={n}, beta={beta:g} lost every predator")
        return PackCandidate(n=0, beta=beta, population=0.0, physical=result.physical,
                             converged=result.converged, positive_count=0,
                             residual=result.residual_norm, state=survivors, requested_n=n)
    state = result.state
    return PackCandidate(n=state.n_predators, beta=beta, population=population(grid, state),
                         physical=result.physical, converged=result.converged,
                         positive_count=positive, residual=result.residual_norm, state=state,
                         requested_n=n if positive < n else None)


@dataclass(eq=False)
class OptimReport:
    candidates: List[PackCandidate]
    best: Optional[PackCandidate]
    alternative: Optional[str]
    identity_residuals: Optional[IdentityResiduals] = None
    n_bar: Optional[int] = None

    def to_dict(self):
        return {
            'candidates': [c.to_dict() for c in self.candidates],
            'best': self.best.to_dict() if self.best else None,
            'alternative': self.alternative,
            'identity_residuals': dict(self.identity_residuals.__dict__)
            if self.identity_residuals else None,
            'n_bar': self.n_bar,
        }


def _dispatch_cells(params, grid, cells, t_max, newton_tol=None):
    mode = getattr(settings, 'PREDPACK_PACKS_DISPATCH', 'inline')
    if mode == 'celery':
        from celery import group

        from .tasks import solve_pack_cell

        jobs = group(solve_pack_cell.s(params.to_dict(), grid.to_dict(), n, beta, t_max,
                                       newton_tol)
                     for n, beta in cells)
        return [candidate_from_dict(grid, data) for data in jobs.apply_async().get()]
    return [solve_cell(params, grid, n, beta, t_max, newton_tol) for n, beta in cells]


def candidate_to_dict(candidate: PackCandidate):
    data = candidate.to_dict()
    data['state'] = candidate.state.as_vector().tolist() if candidate.state is not None else None
    return data


def candidate_from_dict(grid: Grid, data) -> PackCandidate:
    state = SystemState.from_vector(grid, data['state']) if data.get('state') else None
    requested = data.get('requested_n')
    return PackCandidate(n=data['n'], beta=data['beta'], population=data['population'],
                         physical=data['physical'], converged=data['converged'],
                         positive_count=data['positive_count'], residual=data['residual'],
                         state=state, error=data['error'],
                         requested_n=requested if requested != data['n'] else None)


def pick_best(candidates: List[PackCandidate], rel_band=TIE_BAND) -> Optional[PackCandidate]:
    """Largest P; within rel_band of it the fewest predators, then the lowest beta"""
    eligible = [c for c in candidates if c.physical and c.converged and c.n >= 1]
    if not eligible:
        return None
    top = max(c.population for c in eligible)
    band = rel_band * max(1.0, abs(top))
    tied = [c for c in eligible if c.population >= top - band]
    return min(tied, key=lambda c: (c.n, c.beta))


def optimize_packs(params: ModelParams, grid: Grid, n_max, beta_grid, t_max=200.0,
                   newton_tol=None) -> OptimReport:
    """Search over pack counts and competition levels for the largest population P.

    Each cell is reported under the number of predators that survive in it, so a
    requested N whose extra packs die out competes as the smaller N.
    """
    if not params.is_identical:
        raise ParamError("the optimizer needs identical predators", field='omega')
    if n_max < 1 or not beta_grid:
        raise ParamError("need n_max >= 1 and a nonempty beta grid", field='n_max')
    n_bar = None
    if params.mu > 0:
        n_bar = pack_bound(params, grid).n_bar_exact
        if n_max > n_bar + 1:
            raise ParamError(f"n_max={n_max} exceeds the pack bound {n_bar} by more than one",
                             field='n_max')

    cells = [(n, float(beta)) for n in range(1, n_max + 1) for beta in sorted(beta_grid)]
    candidates = _dispatch_cells(params, grid, cells, t_max, newton_tol)
    best = pick_best(candidates)

    alternative = identities = None
    if best is not None:
        at_top = best.beta >= max(beta_grid) and best.n > 1
        alternative = 'SUPREMUM_ALONG_BETA' if at_top else 'MAXIMUM_ATTAINED'
        logger.info(f"best cell N={best.n} (seeded {best.seeded_n}), beta={best.beta:g}, "
                    f"P={best.population:.6g}")
        if params.mu == 0 and best.state.u.min() > 0:
            identities = population_identities(grid, params.with_predators(best.n).with_beta(
                best.beta), best.state)
    else:
        logger.warning("no physical converged cell")
    return OptimReport(candidates=candidates, best=best, alternative=alternative,
                       identity_residuals=identities, n_bar=n_bar)
