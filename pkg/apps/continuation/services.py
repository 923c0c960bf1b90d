import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from django.conf import settings

from apps.core.exceptions import (
    BranchError, DimensionError, NoConvergence, ParamError, ResonanceError, SingularJacobian,
)
from apps.core.params import ModelParams
from apps.equilibria.services import (
    ConstantKind, ConstantSolution, NewtonSolver, SEGMENT_SAMPLES, SteadyStateProblem,
    critical_beta, segment_point, steady_newton, symmetric_point,
)
from apps.evolution.services import SystemState
from apps.grids.services import Grid, Spectrum

logger = logging.getLogger(__name__)

RECONNECT_TOL = 1e-6
UNBOUNDED_AMPLITUDE = 1e-4


class Termination(str, Enum):
    UNBOUNDED_IN_BETA = 'UNBOUNDED_IN_BETA'
    RECONNECTED = 'RECONNECTED'
    STEP_LIMIT = 'STEP_LIMIT'


@dataclass(frozen=True)
class BifurcationPoint:
    n: int
    gamma_n: float
    beta_n: float
    multiplicity: int
    odd: bool
    index: int  # first position of gamma_n in the spectrum

    def to_dict(self):
        return {'n': self.n, 'gamma_n': self.gamma_n, 'beta_n': self.beta_n,
                'multiplicity': self.multiplicity, 'odd': self.odd, 'index': self.index}

    @classmethod
    def from_dict(cls, data):
        return cls(**{key: data[key] for key in
                      ('n', 'gamma_n', 'beta_n', 'multiplicity', 'odd', 'index')})


def bifurcation_points(params: ModelParams, spectrum: Spectrum) -> List[BifurcationPoint]:
    """Critical betas where the antisymmetric modes leave the symmetric family.

    Modes are numbered from the constant mode (n = 0), which never bifurcates.
    """
    if not params.is_symmetric_pair:
        raise ParamError("bifurcation points need a symmetric pair of identical predators",
                         field='omega')
    if not params.viability[0] > 0:
        raise ParamError("predators are not viable (lambda k <= mu omega)", field='lambda')

    points = []
    groups = spectrum.distinct()
    for n, (index, gamma, multiplicity) in enumerate(groups):
        if n == 0:
            continue
        beta = critical_beta(params, gamma)
        if beta is None:
            break
        points.append(BifurcationPoint(n=n, gamma_n=gamma, beta_n=float(beta),
                                       multiplicity=multiplicity, odd=multiplicity % 2 == 1,
                                       index=index))
    else:
        if len(groups) > 1:
            logger.warning(f"every one of the {len(groups)} eigenvalues is admissible; "
                           f"more modes may bifurcate")
    for bp in points:
        if not bp.odd:
            logger.warning(f"mode {bp.n} has even multiplicity {bp.multiplicity}; "
                           f"reported but not switched")
    return points


@dataclass(frozen=True)
class ZeroCount:
    zeros: int
    degenerate: bool = False


def zero_count(state: SystemState, rel_tol=1e-8) -> ZeroCount:
    """Sign changes of w1 - w2 between neighbouring nodes; tiny values are skipped"""
    if state.grid.dim != 1:
        raise DimensionError("zero counts are only defined on intervals")
    v = state.w[0] - state.w[1]
    scale = np.abs(v).max()
    if scale == 0:
        return ZeroCount(zeros=0, degenerate=True)
    kept = np.sign(v[np.abs(v) >= rel_tol * scale])
    return ZeroCount(zeros=int(np.count_nonzero(kept[1:] != kept[:-1])))


def amplitude(state: SystemState) -> float:
    return float(np.abs(state.w[0] - state.w[1]).max())


def segment_family(params: ModelParams) -> List[ConstantSolution]:
    if params.beta != 0 or any(m != 0 for m in params.mu_self):
        raise ParamError("the segment family exists only at beta = 0 without saturation",
                         field='beta')
    if not params.is_symmetric_pair:
        raise ParamError("the segment family needs a symmetric pair", field='omega')
    return [ConstantSolution(ConstantKind.FAMILY_SEGMENT, segment_point(params, s), 0.0, s=s)
            for s in SEGMENT_SAMPLES]


@dataclass(frozen=True, eq=False)
class BranchSeed:
    beta: float
    state: SystemState


def _mode_direction(grid, spectrum, bp):
    psi = spectrum.eigenfunctions[bp.index]
    zeros = np.zeros(grid.size)
    return np.concatenate([psi, -psi, zeros])


def branch_switch(params: ModelParams, bp: BifurcationPoint, grid: Grid, spectrum: Spectrum,
                  eps=None, delta=1e-2) -> BranchSeed:
    """Type-(d) constant just past beta_n plus eps (psi_n, -psi_n, 0)"""
    if not bp.odd:
        raise BranchError(f"mode {bp.n} has even multiplicity; no switching recipe")
    beta = bp.beta_n * (1.0 + delta)
    point = symmetric_point(params, beta)
    if eps is None:
        eps = 1e-2 * point.w[0]
    base = SystemState.constant(grid, point).as_vector()
    state = SystemState.from_vector(grid, base + eps * _mode_direction(grid, spectrum, bp))
    return BranchSeed(beta=beta, state=state)


@dataclass(frozen=True, eq=False)
class BranchPoint:
    beta: float
    state: SystemState
    residual: float
    zero_count: Optional[int]
    amplitude: float


@dataclass
class Branch:
    params: ModelParams
    grid: Grid
    origin: Optional[BifurcationPoint]
    points: List[BranchPoint] = field(default_factory=list)
    termination: Optional[Termination] = None
    reconnected_to: Optional[int] = None

    @property
    def termination_label(self):
        if self.termination is Termination.RECONNECTED:
            return f'RECONNECTED({self.reconnected_to})'
        return self.termination.value if self.termination else None

    @property
    def betas(self):
        return np.array([p.beta for p in self.points])

    @property
    def amplitudes(self):
        return np.array([p.amplitude for p in self.points])

    @property
    def zero_counts(self):
        return [p.zero_count for p in self.points]

    def state_at(self, beta):
        """Stored point with beta closest to ``beta``"""
        return self.points[int(np.argmin(np.abs(self.betas - beta)))]


@dataclass(frozen=True)
class ContinuationConfig:
    ds0: float = 0.05
    ds_min: float = 1e-6
    ds_max: float = 25.0
    beta_max: float = None
    max_steps: int = None
    corrector_max_iter: int = 8
    grow_below: int = 3
    shrink_above: int = 5
    reconnect_tol: float = RECONNECT_TOL
    newton_tol: float = None

    def resolved(self):
        beta_max = self.beta_max if self.beta_max is not None else getattr(
            settings, 'PREDPACK_CONTINUATION_BETA_MAX', 500.0)
        max_steps = self.max_steps if self.max_steps is not None else getattr(
            settings, 'PREDPACK_CONTINUATION_MAX_STEPS', 2000)
        return replace(self, beta_max=beta_max, max_steps=max_steps)


class BranchContinuation:
    """Pseudo-arclength continuation of stationary states in beta.

    Unknowns are x = (v, beta) with the weighted inner product
    <x, y> = h v.v' + beta beta'. The corrector solves the stationary system
    bordered by the arclength condition <t, x - x_pred> = 0.
    """

    def __init__(self, params: ModelParams, grid: Grid, config: ContinuationConfig = None,
                 spectrum: Spectrum = None):
        self.params = params
        self.grid = grid
        self.config = (config or ContinuationConfig()).resolved()
        self.spectrum = spectrum
        self.solver = NewtonSolver(tol=self.config.newton_tol)
        self.corrector = NewtonSolver(tol=self.config.newton_tol,
                                      max_iter=self.config.corrector_max_iter)
        self._cached = None

    def problem(self, beta) -> SteadyStateProblem:
        if self._cached is None or self._cached[0] != beta:
            self._cached = (beta, SteadyStateProblem(self.params.with_beta(beta), self.grid))
        return self._cached[1]

    def dot(self, x, y):
        return self.grid.cell_volume * np.dot(x[:-1], y[:-1]) + x[-1] * y[-1]

    def norm(self, x):
        return float(np.sqrt(self.dot(x, x)))

    def bordered_solve(self, row, x0):
        """Newton on (F(v, beta), row . (x - x0)) = 0 with a weighted constraint row"""
        h = self.grid.cell_volume
        weights = np.append(np.full(len(x0) - 1, h), 1.0)

        def residual(x):
            problem = self.problem(x[-1])
            return np.append(problem.residual(x[:-1]), np.dot(row * weights, x - x0))

        def jacobian(x):
            problem = self.problem(x[-1])
            column = sp.csc_matrix(problem.dbeta(x[:-1]).reshape(-1, 1))
            border = sp.csr_matrix((row * weights).reshape(1, -1))
            return sp.bmat([[problem.jacobian(x[:-1]), column], [border[:, :-1], border[:, -1:]]],
                           format='csc')

        return self.corrector.solve(residual, jacobian, x0)

    def tangent(self, x, direction, reference):
        """Unit tangent at x, oriented so the projection of w1 - w2 on ``reference`` grows"""
        problem = self.problem(x[-1])
        lu = self.solver.factor(problem.jacobian(x[:-1]))
        t = np.append(lu.solve(-problem.dbeta(x[:-1])), 1.0)
        t /= self.norm(t)
        m = self.grid.size
        growth = np.dot(t[:m] - t[m:2 * m], reference)
        if np.sign(growth) * direction < 0:
            t = -t
        return t

    def make_point(self, x) -> BranchPoint:
        beta = float(x[-1])
        state = SystemState.from_vector(self.grid, x[:-1])
        residual = float(np.abs(self.problem(beta).residual(x[:-1])).max())
        try:
            zeros = zero_count(state).zeros
        except DimensionError:
            zeros = None
        return BranchPoint(beta=beta, state=state, residual=residual, zero_count=zeros,
                           amplitude=amplitude(state))

    def distance_to_symmetric(self, x):
        point = symmetric_point(self.params, x[-1])
        diff = x[:-1] - SystemState.constant(self.grid, point).as_vector()
        return float(np.sqrt(self.grid.cell_volume * np.dot(diff, diff)))

    def nearest_mode(self, beta, fallback):
        if self.spectrum is None:
            return fallback
        try:
            candidates = bifurcation_points(self.params, self.spectrum)
        except ResonanceError:
            return fallback
        if not candidates:
            return fallback
        return min(candidates, key=lambda bp: abs(bp.beta_n - beta)).n

    def land(self, x_prev, x_next, beta_max):
        """Fixed-beta solve at beta_max from the chord between two accepted points"""
        theta = (beta_max - x_prev[-1]) / (x_next[-1] - x_prev[-1])
        guess = x_prev[:-1] + theta * (x_next[:-1] - x_prev[:-1])
        result = steady_newton(self.params.with_beta(beta_max), self.grid,
                               SystemState.from_vector(self.grid, guess), solver=self.solver)
        return np.append(result.state.as_vector(), beta_max)

    def run(self, start: BranchPoint, direction=1, origin: BifurcationPoint = None) -> Branch:
        if direction not in (1, -1):
            raise BranchError(f"direction must be +1 or -1, got {direction}")
        cfg = self.config
        m = self.grid.size
        branch = Branch(params=self.params.with_beta(start.beta), grid=self.grid, origin=origin,
                        points=[start])
        x = np.append(start.state.as_vector(), start.beta)
        reference = x[:m] - x[m:2 * m]
        t = self.tangent(x, direction, reference)
        ds = cfg.ds0
        steps = 0

        while steps < cfg.max_steps:
            x_pred = x + ds * t
            try:
                outcome = self.bordered_solve(t, x_pred)
                failed = not outcome.converged or not outcome.x[-1] > 0
            except (SingularJacobian, ParamError) as e:
                logger.debug(f"corrector failed at ds={ds:.3g}: {e}")
                outcome, failed = None, True
            if failed:
                ds /= 2.0
                if ds < cfg.ds_min:
                    raise SingularJacobian(
                        f"arclength step fell below {cfg.ds_min:g} near beta={x[-1]:.6g}")
                continue

            y = outcome.x
            steps += 1
            if y[-1] >= cfg.beta_max:
                y = self.land(x, y, cfg.beta_max)
                point = self.make_point(y)
                branch.points.append(point)
                branch.termination = (Termination.UNBOUNDED_IN_BETA
                                      if point.amplitude > UNBOUNDED_AMPLITUDE
                                      else Termination.STEP_LIMIT)
                break

            point = self.make_point(y)
            branch.points.append(point)
            projection = np.dot(y[:m] - y[m:2 * m], reference)
            if self.distance_to_symmetric(y) < cfg.reconnect_tol or projection <= 0:
                branch.termination = Termination.RECONNECTED
                branch.reconnected_to = self.nearest_mode(
                    y[-1], origin.n if origin is not None else None)
                break

            secant = y - x
            t = secant / self.norm(secant)
            x = y
            if outcome.iterations <= cfg.grow_below:
                ds = min(1.5 * ds, cfg.ds_max)
            elif outcome.iterations > cfg.shrink_above:
                ds /= 2.0
            logger.debug(f"step {steps}: beta={y[-1]:.6g}, amplitude={point.amplitude:.4g}, "
                         f"ds={ds:.3g}")
        else:
            branch.termination = Termination.STEP_LIMIT

        branch.params = self.params.with_beta(branch.points[-1].beta)
        logger.info(f"branch from beta={start.beta:.6g} ended with {branch.termination_label} "
                    f"after {len(branch.points)} points at beta={branch.points[-1].beta:.6g}")
        return branch


def start_branch(params: ModelParams, bp: BifurcationPoint, grid: Grid, spectrum: Spectrum,
                 eps=None, delta=1e-2, config: ContinuationConfig = None) -> BranchPoint:
    """First non-constant point of the branch leaving the symmetric family at ``bp``.

    Tries a fixed-beta Newton from the switch guess; if that falls back onto the
    symmetric family, the point is found with the amplitude along the mode pinned.
    """
    seed = branch_switch(params, bp, grid, spectrum, eps, delta)
    continuation = BranchContinuation(params, grid, config, spectrum=spectrum)
    try:
        result = steady_newton(params.with_beta(seed.beta), grid, seed.state,
                               solver=continuation.solver)
        x = np.append(result.state.as_vector(), seed.beta)
        if continuation.distance_to_symmetric(x) >= RECONNECT_TOL:
            return continuation.make_point(x)
        logger.info(f"fixed-beta Newton returned to the symmetric family at mode {bp.n}")
    except (NoConvergence, SingularJacobian) as e:
        logger.info(f"fixed-beta start failed at mode {bp.n}: {e}")

    base = SystemState.constant(grid, symmetric_point(params, bp.beta_n)).as_vector()
    phi = _mode_direction(grid, spectrum, bp)
    if eps is None:
        eps = 1e-2 * symmetric_point(params, seed.beta).w[0]
    # pins h <phi, v - v_d> = eps h |phi|^2, which stays regular at beta_n
    outcome = continuation.bordered_solve(np.append(phi, 0.0),
                                          np.append(base + eps * phi, bp.beta_n))
    if not outcome.converged:
        raise NoConvergence(f"could not leave the symmetric family at beta_{bp.n}")
    return continuation.make_point(outcome.x)


def continue_branch(params: ModelParams, start: BranchPoint, direction=1,
                    config: ContinuationConfig = None, grid: Grid = None,
                    origin: BifurcationPoint = None, spectrum: Spectrum = None) -> Branch:
    if start.residual >= 1e-8:
        raise BranchError(f"start point residual {start.residual:.3g} is not converged")
    grid = grid or start.state.grid
    return BranchContinuation(params, grid, config, spectrum).run(start, direction, origin)
