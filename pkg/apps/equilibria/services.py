import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, onenormest, splu
from django.conf import settings

from apps.core.exceptions import (
    NoConvergence, ParamError, ResonanceError, SingularJacobian, SpectrumError,
)
from apps.core.params import ModelParams, StatePoint
from apps.core.services import reaction, reaction_arrays, reaction_jacobian, reaction_jacobian_field
from apps.evolution.services import SystemState
from apps.grids.services import Grid, neumann_spectrum

logger = logging.getLogger(__name__)

STABILITY_TOL = 1e-10
SEGMENT_SAMPLES = (0.0, 0.25, 0.5, 0.75, 1.0)


class ConstantKind(str, Enum):
    ZERO = 'ZERO'
    PREY_ONLY = 'PREY_ONLY'
    SIMPLE = 'SIMPLE'
    COEXIST_SYMMETRIC = 'COEXIST_SYMMETRIC'
    FAMILY_SEGMENT = 'FAMILY_SEGMENT'


class Stability(str, Enum):
    STRONGLY_STABLE = 'STRONGLY_STABLE'
    WEAKLY_STABLE = 'WEAKLY_STABLE'
    UNSTABLE = 'UNSTABLE'


@dataclass(frozen=True)
class ConstantSolution:
    kind: ConstantKind
    point: StatePoint
    beta: float
    index: Optional[int] = None  # surviving predator of a SIMPLE solution (0-based)
    s: Optional[float] = None  # position along the beta = 0 segment
    residual: float = 0.0

    @property
    def label(self):
        if self.kind is ConstantKind.SIMPLE:
            return f'SIMPLE({self.index + 1})'
        if self.kind is ConstantKind.FAMILY_SEGMENT:
            return f'FAMILY_SEGMENT({self.s:g})'
        return self.kind.value


@dataclass(frozen=True)
class StabilityVerdict:
    classification: Stability
    critical_mode: int
    critical_eigenvalue: complex
    min_real_part: float
    modes_checked: int


def _residual(params, point):
    f = reaction(params, point)
    return float(np.abs(f.as_array()).max())


def _require_symmetric_pair(params):
    if not params.is_symmetric_pair:
        raise ParamError("closed forms need two identical predators with symmetric competition",
                         field='omega')


def simple_point(params: ModelParams, i: int) -> StatePoint:
    """Constant solution where only predator i survives"""
    k, omega, mu_i = params.kpred[i], params.omega[i], params.mu_self[i]
    w = params.viability[i] / (k ** 2 + params.mu * mu_i)
    u = (omega + mu_i * w) / k
    values = [0.0] * params.n_predators
    values[i] = w
    return StatePoint(w=tuple(values), u=u)


def symmetric_point(params: ModelParams, beta=None) -> StatePoint:
    """Two-predator coexistence constant w1 = w2 = w"""
    _require_symmetric_pair(params)
    beta = params.beta if beta is None else beta
    k, omega, m, a = params.kpred[0], params.omega[0], params.mu_self[0], params.a[0][1]
    w = params.viability[0] / (2 * k ** 2 + params.mu * (m + beta * a))
    u = (omega + (m + beta * a) * w) / k
    return StatePoint(w=(w, w), u=u)


def segment_point(params: ModelParams, s: float) -> StatePoint:
    k = params.kpred[0]
    total = params.viability[0] / k ** 2
    return StatePoint(w=(total * s, total * (1.0 - s)), u=params.omega[0] / k)


def constant_catalog(params: ModelParams) -> List[ConstantSolution]:
    beta = params.beta
    catalog = [ConstantSolution(ConstantKind.ZERO, StatePoint(w=(0.0,) * params.n_predators, u=0.0),
                                beta)]
    if params.mu > 0:
        catalog.append(ConstantSolution(
            ConstantKind.PREY_ONLY,
            StatePoint(w=(0.0,) * params.n_predators, u=params.lam / params.mu), beta))
    for i in range(params.n_predators):
        if params.viability[i] > 0:
            catalog.append(ConstantSolution(ConstantKind.SIMPLE, simple_point(params, i), beta,
                                            index=i))
    if params.is_symmetric_pair and params.viability[0] > 0:
        catalog.append(ConstantSolution(ConstantKind.COEXIST_SYMMETRIC, symmetric_point(params),
                                        beta))
        if beta == 0 and params.mu_self[0] == 0:
            catalog.extend(ConstantSolution(ConstantKind.FAMILY_SEGMENT, segment_point(params, s),
                                            beta, s=s) for s in SEGMENT_SAMPLES)

    catalog = [ConstantSolution(c.kind, c.point, c.beta, c.index, c.s, _residual(params, c.point))
               for c in catalog]
    worst = max(c.residual for c in catalog)
    if worst > 1e-12 * max(1.0, params.lam, params.lam / params.mu if params.mu else 1.0):
        logger.warning(f"catalog residual {worst:.3g} above round-off")
    return catalog


def mode_matrix(params: ModelParams, point: StatePoint, gamma: float) -> np.ndarray:
    """gamma diag(d_1, ..., d_N, D) - A at a constant state"""
    return gamma * np.diag(params.diffusivities) - reaction_jacobian(params, point)


def constant_stability(params: ModelParams, sol: ConstantSolution, spectrum,
                       tol=STABILITY_TOL) -> StabilityVerdict:
    """Linear stability of a constant solution, mode by mode.

    Modes past h_max (the first with gamma_h min(d) > 2 ||A||_2) cannot be unstable.
    """
    jac = reaction_jacobian(params, sol.point)
    bound = 2.0 * np.linalg.norm(jac, 2)
    d_min = params.diffusivities.min()
    eigenvalues = np.asarray(spectrum.eigenvalues)
    beyond = np.flatnonzero(eigenvalues * d_min > bound)
    if beyond.size == 0:
        raise SpectrumError(
            f"need an eigenvalue above {bound / d_min:.6g}; "
            f"spectrum stops at {eigenvalues[-1]:.6g}")
    h_max = int(beyond[0])

    critical_mode, critical, min_real = 0, 0j, np.inf
    for h in range(h_max + 1):
        values = np.linalg.eigvals(eigenvalues[h] * np.diag(params.diffusivities) - jac)
        j = int(np.argmin(values.real))
        if values[j].real < min_real:
            critical_mode, critical, min_real = h, complex(values[j]), float(values[j].real)

    if min_real > tol:
        classification = Stability.STRONGLY_STABLE
    elif min_real >= -tol:
        classification = Stability.WEAKLY_STABLE
    else:
        classification = Stability.UNSTABLE
    return StabilityVerdict(classification, critical_mode, critical, min_real, h_max)


def simple_stability_threshold(params: ModelParams, i: int) -> List[Tuple[int, float]]:
    """Competition level above which predator j cannot invade SIMPLE(i), for every j != i.

    Negative thresholds mean SIMPLE(i) resists invasion by j for all beta >= 0.
    """
    point = simple_point(params, i)
    w_i = point.w[i]
    if not w_i > 0:
        raise ParamError(f"SIMPLE({i + 1}) has no positive predator density", field='omega')
    thresholds = []
    for j in range(params.n_predators):
        if j == i:
            continue
        k_j = params.kpred[j]
        beta = k_j / (params.a[j][i] * w_i) * (point.u - params.omega[j] / k_j)
        thresholds.append((j, float(beta)))
    return thresholds


def simple_mode_eigenvalues(params: ModelParams, i: int, gamma: float) -> np.ndarray:
    """Closed-form eigenvalues of the (w_i, u) block of the mode matrix at SIMPLE(i)"""
    point = simple_point(params, i)
    w, u = point.w[i], point.u
    d_i, big_d, k = params.d[i], params.dprey, params.kpred[i]
    a11 = gamma * d_i + params.mu_self[i] * w
    a22 = gamma * big_d + params.mu * u
    trace = a11 + a22
    det = a11 * a22 + k ** 2 * w * u
    root = np.sqrt(complex(trace ** 2 - 4 * det))
    return np.array([(trace - root) / 2, (trace + root) / 2])


def critical_beta(params: ModelParams, gamma: float) -> Optional[float]:
    """beta at which the antisymmetric mode with eigenvalue gamma destabilizes COEXIST_SYMMETRIC.

    Returns None when that mode never destabilizes (gamma beyond the viability ceiling).
    """
    _require_symmetric_pair(params)
    rate = params.viability[0]
    k, m, a, d = params.kpred[0], params.mu_self[0], params.a[0][1], params.d[0]
    denominator = rate - params.mu * d * gamma
    if abs(denominator) <= 1e-10 * max(1.0, abs(rate)):
        raise ResonanceError(f"gamma={gamma:.10g} resonates with the viability ceiling")
    if denominator < 0:
        return None
    return (d * gamma * (2 * k ** 2 + params.mu * m) + m * rate) / (a * denominator)


class SteadyStateProblem:
    """Discrete stationary system diag(d) Δv + F(v) = 0 on a grid.

    Unknowns are stacked component-major: w_1, ..., w_N, u.
    """

    def __init__(self, params: ModelParams, grid: Grid, operators=None):
        self.params = params
        self.grid = grid
        n = params.n_components
        self.operators = list(operators) if operators is not None else [grid.laplacian] * n
        self.diffusion = sp.block_diag(
            [d * op for d, op in zip(params.diffusivities, self.operators)], format='csr')
        m = grid.size
        idx = np.arange(m)
        self._rows = np.broadcast_to(np.arange(n)[:, None, None] * m + idx, (n, n, m)).ravel()
        self._cols = np.broadcast_to(np.arange(n)[None, :, None] * m + idx, (n, n, m)).ravel()

    @property
    def size(self):
        return self.params.n_components * self.grid.size

    def at_beta(self, beta):
        return SteadyStateProblem(self.params.with_beta(beta), self.grid, self.operators)

    def split(self, v):
        parts = np.asarray(v).reshape(self.params.n_components, self.grid.size)
        return parts[:-1], parts[-1]

    def residual(self, v):
        w, u = self.split(v)
        fw, fu = reaction_arrays(self.params, w, u)
        return self.diffusion @ v + np.concatenate([fw.ravel(), fu])

    def jacobian(self, v):
        w, u = self.split(v)
        blocks = reaction_jacobian_field(self.params, w, u)
        local = sp.csr_matrix((blocks.ravel(), (self._rows, self._cols)),
                              shape=(self.size, self.size))
        return (self.diffusion + local).tocsc()

    def dbeta(self, v):
        """Derivative of the residual with respect to beta"""
        w, _ = self.split(v)
        dw = -(self.params.a_matrix @ w) * w
        return np.concatenate([dw.ravel(), np.zeros(self.grid.size)])


def condition_estimate(matrix, lu) -> float:
    n = matrix.shape[0]
    inverse = LinearOperator((n, n), matvec=lu.solve,
                             rmatvec=lambda x: lu.solve(x, trans='T'), dtype=float)
    return float(onenormest(matrix) * onenormest(inverse))


@dataclass(frozen=True, eq=False)
class NewtonOutcome:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


class NewtonSolver:
    """Damped Newton with sparse LU.

    Steps are halved while the sup-norm residual does not decrease, down to
    ``min_damping``; a factorization that fails or whose condition estimate
    exceeds ``cond_limit`` raises SingularJacobian.
    """

    def __init__(self, tol=None, max_iter=None, cond_limit=None, min_damping=2.0 ** -10):
        self.tol = tol if tol is not None else getattr(settings, 'PREDPACK_NEWTON_TOL', 1e-10)
        self.max_iter = max_iter if max_iter is not None else getattr(
            settings, 'PREDPACK_NEWTON_MAX_ITER', 50)
        self.cond_limit = cond_limit if cond_limit is not None else getattr(
            settings, 'PREDPACK_NEWTON_COND_LIMIT', 1e12)
        self.min_damping = min_damping

    def factor(self, matrix):
        try:
            lu = splu(sp.csc_matrix(matrix))
        except RuntimeError as e:
            raise SingularJacobian(f"Jacobian factorization failed: {e}")
        if self.cond_limit:
            cond = condition_estimate(matrix, lu)
            if not np.isfinite(cond) or cond > self.cond_limit:
                raise SingularJacobian(f"Jacobian condition estimate {cond:.3g} exceeds "
                                       f"{self.cond_limit:.3g}")
        return lu

    def solve(self, residual_fn, jacobian_fn, x0) -> NewtonOutcome:
        x = np.array(x0, dtype=float)
        r = residual_fn(x)
        norm = float(np.abs(r).max())
        iterations = 0
        while np.isfinite(norm) and norm >= self.tol and iterations < self.max_iter:
            dx = self.factor(jacobian_fn(x)).solve(-r)
            damping = 1.0
            while True:
                x_try = x + damping * dx
                r_try = residual_fn(x_try)
                norm_try = float(np.abs(r_try).max())
                if (np.isfinite(norm_try) and norm_try < norm) or damping <= self.min_damping:
                    break
                damping /= 2.0
            x, r, norm = x_try, r_try, norm_try
            iterations += 1
            logger.debug(f"newton {iterations}: residual {norm:.3e} (damping {damping:g})")
        converged = bool(np.isfinite(norm) and norm < self.tol)
        return NewtonOutcome(x=x, residual_norm=norm, iterations=iterations, converged=converged)


@dataclass(frozen=True, eq=False)
class NewtonResult:
    state: SystemState
    residual_norm: float
    iterations: int
    converged: bool
    physical: bool


def steady_newton(params: ModelParams, grid: Grid, guess: SystemState, strict=True,
                  solver: NewtonSolver = None, operators=None) -> NewtonResult:
    """Polish ``guess`` into a stationary state.

    With ``strict`` a non-converged iteration raises NoConvergence; otherwise the
    last iterate is returned with ``converged=False``.
    """
    solver = solver or NewtonSolver()
    problem = SteadyStateProblem(params, grid, operators)
    outcome = solver.solve(problem.residual, problem.jacobian, guess.as_vector())
    state = SystemState.from_vector(grid, outcome.x, t=guess.t)
    if not outcome.converged:
        message = (f"Newton stopped after {outcome.iterations} iterations with residual "
                   f"{outcome.residual_norm:.3e}")
        if strict:
            raise NoConvergence(message)
        logger.warning(message)
    return NewtonResult(state=state, residual_norm=outcome.residual_norm,
                        iterations=outcome.iterations, converged=outcome.converged,
                        physical=state.is_physical())


@dataclass(frozen=True)
class ConstancyReport:
    flags: Tuple[bool, ...]
    consistent: bool
    law_checked: bool


def constancy_check(state: SystemState, tol=1e-8, residual=None) -> ConstancyReport:
    """Per-component constancy, and whether the all-or-none law holds.

    Identically vanishing predators are left out of the law; it is only asserted
    (``law_checked``) for two-predator states with residual below 1e-8.
    """
    flags = tuple(bool(np.ptp(f) < tol * (1.0 + np.abs(f).max())) for f in state.fields)
    alive = [flag for flag, f in zip(flags, state.fields) if np.abs(f).max() >= tol]
    consistent = all(alive) or not any(alive)
    law_checked = state.n_predators == 2 and residual is not None and residual < 1e-8
    if law_checked and not consistent:
        logger.warning(f"mixed constancy flags {flags} on a converged state")
    return ConstancyReport(flags=flags, consistent=consistent, law_checked=law_checked)


def distance_to_constant(state: SystemState, point: StatePoint) -> float:
    diff = state.as_vector() - SystemState.constant(state.grid, point).as_vector()
    return float(np.sqrt(np.dot(diff, diff) * state.grid.cell_volume))


@dataclass
class RigidityScan:
    beta: float
    trials: int
    converged: int
    landed: int
    distances: List[float] = field(default_factory=list)

    @property
    def all_landed(self):
        return self.landed == self.converged


def small_beta_rigidity_scan(params: ModelParams, grid: Grid, beta=None, trials=50, seed=0,
                             tol=1e-6, solver=None) -> RigidityScan:
    """Newton from random physical guesses; count how many land on catalog members.

    Guesses are random constants plus a random low-mode ripple. Non-converged and
    non-physical roots are skipped. ``beta`` defaults to half the first
    bifurcation value of the symmetric pair.
    """
    if beta is None:
        gamma_1 = neumann_spectrum(grid, min(grid.size, 4)).first_positive()
        first = critical_beta(params, gamma_1)
        if first is None:
            raise ParamError("no bifurcation from the symmetric family; pass beta explicitly",
                             field='beta')
        beta = 0.5 * first
    params = params.with_beta(beta)
    catalog = constant_catalog(params)
    rng = np.random.default_rng(seed)
    solver = solver or NewtonSolver(cond_limit=0)
    w_scale = max(params.lam / k for k in params.kpred)
    u_scale = params.lam / params.mu if params.mu > 0 else 2 * max(params.omega) / min(params.kpred)
    x = (grid.nodes[:, 0] - grid.extents[0][0]) / grid.lengths[0]

    scan = RigidityScan(beta=beta, trials=trials, converged=0, landed=0)
    for _ in range(trials):
        levels = np.append(rng.uniform(0.0, 1.5 * w_scale, params.n_predators),
                           rng.uniform(0.0, 1.5 * u_scale))
        ripple = 0.05 * rng.uniform(-1, 1, params.n_components)
        fields = [level * (1 + r * np.cos(np.pi * x)) for level, r in zip(levels, ripple)]
        guess = SystemState(grid=grid, w=np.array(fields[:-1]), u=fields[-1])
        try:
            result = steady_newton(params, grid, guess, strict=False, solver=solver)
        except SingularJacobian:
            continue
        if not (result.converged and result.physical):
            continue
        scan.converged += 1
        distance = min(distance_to_constant(result.state, c.point) for c in catalog)
        scan.distances.append(distance)
        if distance < tol:
            scan.landed += 1
    logger.info(f"rigidity scan at beta={beta:.6g}: {scan.landed}/{scan.converged} converged "
                f"roots are catalog members ({trials} trials)")
    return scan
