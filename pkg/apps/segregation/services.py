import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from apps.core.exceptions import BranchError, GridError, InsufficientData, ParamError
from apps.core.params import ModelParams
from apps.core.services import reaction_arrays
from apps.equilibria.services import symmetric_point
from apps.evolution.services import SystemState
from apps.grids.services import (
    Grid, inner_product, integrate, max_gradient, max_second_difference, modes_below,
)

logger = logging.getLogger(__name__)

MIN_SWEEP_POINTS = 5
SEGREGATING_AMPLITUDE = 0.1
SEGREGATING_OVERLAP = 0.2
COLLAPSING_AMPLITUDE = 0.05
RESONANCE_WINDOW = 1e-3
LIPSCHITZ_SLOPE = 0.05


class TailClass(str, Enum):
    SEGREGATING = 'SEGREGATING'
    COLLAPSING = 'COLLAPSING'
    UNCLASSIFIED = 'UNCLASSIFIED'


def _two_predators(state):
    if state.n_predators < 2:
        raise GridError("segregation diagnostics need at least two predator fields")


def overlap(grid: Grid, state: SystemState) -> float:
    """∫ w1 w2 over the domain"""
    _two_predators(state)
    return inner_product(grid, state.w[0], state.w[1])


@dataclass(frozen=True)
class FreeBoundary:
    nodes: Tuple[int, ...]
    measure: float
    threshold: float
    interfaces: Tuple[float, ...] = ()


def free_boundary(grid: Grid, state: SystemState, threshold=None) -> FreeBoundary:
    """Nodes where the total predator density falls below ``threshold`` times its max.

    ``threshold = 0`` asks for the exact zero set. In 1D the sign changes of w1 - w2
    are also located by linear interpolation.
    """
    if threshold is None:
        threshold = getattr(settings, 'PREDPACK_FREE_BOUNDARY_THRESHOLD', 1e-3)
    total = state.w.sum(axis=0)
    if threshold > 0:
        mask = total < threshold * np.abs(total).max()
    else:
        mask = total == 0
    nodes = tuple(int(i) for i in np.flatnonzero(mask))

    interfaces = ()
    if grid.dim == 1 and state.n_predators >= 2:
        x, = grid.axes
        v = state.w[0] - state.w[1]
        crossings = np.flatnonzero(np.sign(v[1:]) * np.sign(v[:-1]) < 0)
        interfaces = tuple(float(x[i] - v[i] * (x[i + 1] - x[i]) / (v[i + 1] - v[i]))
                           for i in crossings)
    return FreeBoundary(nodes=nodes, measure=len(nodes) * grid.cell_volume,
                        threshold=float(threshold), interfaces=interfaces)


@dataclass(frozen=True, eq=False)
class SegregationReport:
    betas: np.ndarray
    overlaps: np.ndarray
    sup_ratio: np.ndarray
    amplitudes: np.ndarray
    lip_estimate: np.ndarray
    second_differences: np.ndarray
    collapse_products: np.ndarray  # rows (beta max_i |w_i|, sup |u - lambda/mu|)
    free_boundary_cells: List[Tuple[int, ...]]
    interfaces: List[Tuple[float, ...]]
    classification: TailClass
    near_resonant: bool = False
    limit_zero_count: Optional[int] = None

    def to_dict(self):
        return {
            'betas': self.betas,
            'overlaps': self.overlaps,
            'sup_ratio': self.sup_ratio,
            'amplitudes': self.amplitudes,
            'lip_estimate': self.lip_estimate,
            'second_differences': self.second_differences,
            'collapse_products': self.collapse_products,
            'free_boundary_cells': [list(c) for c in self.free_boundary_cells],
            'classification': self.classification.value,
            'near_resonant': self.near_resonant,
            'limit_zero_count': self.limit_zero_count,
        }


def _near_resonance(params, grid):
    if params.mu == 0:
        return False
    ceiling = max(params.viability / (np.asarray(params.d) * params.mu))
    if ceiling <= 0:
        return False
    spectrum = modes_below(grid, ceiling * (1 + RESONANCE_WINDOW))
    gaps = np.abs(spectrum.eigenvalues - ceiling) / ceiling
    return bool(np.any(gaps <= RESONANCE_WINDOW))


def classify_tail(amplitudes, overlaps) -> TailClass:
    start, end = amplitudes[0], amplitudes[-1]
    if start <= 0:
        return TailClass.UNCLASSIFIED
    if end / start < COLLAPSING_AMPLITUDE:
        return TailClass.COLLAPSING
    overlap_ratio = overlaps[-1] / overlaps[0] if overlaps[0] > 0 else 0.0
    if end > SEGREGATING_AMPLITUDE * start and overlap_ratio < SEGREGATING_OVERLAP:
        return TailClass.SEGREGATING
    return TailClass.UNCLASSIFIED


def beta_sweep_points(params: ModelParams, betas: Sequence[float],
                      states: Sequence[SystemState], threshold=None) -> SegregationReport:
    """Segregation diagnostics for any family of states indexed by beta"""
    if len(betas) < MIN_SWEEP_POINTS:
        raise InsufficientData(f"need at least {MIN_SWEEP_POINTS} sweep points, got {len(betas)}")
    order = np.argsort(betas, kind='stable')
    betas = np.asarray(betas, dtype=float)[order]
    states = [states[i] for i in order]
    grid = states[0].grid
    prey_level = params.lam / params.mu if params.mu > 0 else np.nan

    overlaps, ratios, amplitudes, lips, seconds, products = [], [], [], [], [], []
    cells, interfaces = [], []
    for beta, state in zip(betas, states):
        sups = np.abs(state.w).max(axis=1)
        overlaps.append(overlap(grid, state))
        ratios.append(sups[0] / sups[1] if sups[1] > 0 else np.inf)
        amplitudes.append(sups.max())
        lips.append(max(max_gradient(grid, w) for w in state.w))
        seconds.append(max(max_second_difference(grid, w) for w in state.w))
        products.append((beta * sups.max(), np.abs(state.u - prey_level).max()))
        boundary = free_boundary(grid, state, threshold)
        cells.append(boundary.nodes)
        interfaces.append(boundary.interfaces)

    amplitudes = np.array(amplitudes)
    overlaps = np.array(overlaps)
    near = _near_resonance(params, grid)
    if near:
        logger.warning("viability ceiling within 0.1% of a Neumann eigenvalue; "
                       "tail left unclassified")
        classification = TailClass.UNCLASSIFIED
    else:
        classification = classify_tail(amplitudes, overlaps)

    limit_zeros = None
    if grid.dim == 1:
        v = states[-1].w[0] - states[-1].w[1]
        scale = np.abs(v).max()
        if scale > 0:
            kept = np.sign(v[np.abs(v) >= 1e-8 * scale])
            limit_zeros = int(np.count_nonzero(kept[1:] != kept[:-1]))

    logger.info(f"sweep over beta in [{betas[0]:.4g}, {betas[-1]:.4g}] ({len(betas)} points): "
                f"{classification.value}")
    return SegregationReport(
        betas=betas, overlaps=overlaps, sup_ratio=np.array(ratios), amplitudes=amplitudes,
        lip_estimate=np.array(lips), second_differences=np.array(seconds),
        collapse_products=np.array(products), free_boundary_cells=cells, interfaces=interfaces,
        classification=classification, near_resonant=near, limit_zero_count=limit_zeros)


def beta_sweep(branch, threshold=None) -> SegregationReport:
    return beta_sweep_points(branch.params, [p.beta for p in branch.points],
                             [p.state for p in branch.points], threshold)


def _tail(values):
    return values[len(values) // 2:]


@dataclass(frozen=True)
class Comparability:
    m: float
    beta: float


def comparability(report: SegregationReport) -> Comparability:
    """Largest max(r, 1/r) of the sup-norm ratio over the tail, with the beta attaining it"""
    if report.classification is not TailClass.SEGREGATING:
        raise BranchError(f"comparability needs a SEGREGATING tail, got "
                          f"{report.classification.value}", field='classification')
    ratios = _tail(report.sup_ratio)
    spread = np.maximum(ratios, 1.0 / ratios)
    index = int(np.argmax(spread))
    return Comparability(m=float(spread[index]), beta=float(_tail(report.betas)[index]))


@dataclass(frozen=True, eq=False)
class LipschitzProfile:
    betas: np.ndarray
    gradients: np.ndarray
    tail_slope: float

    @property
    def bounded(self):
        return self.tail_slope <= LIPSCHITZ_SLOPE

    @property
    def spread(self):
        tail = _tail(self.gradients)
        return float(tail.max() / tail.min()) if tail.min() > 0 else np.inf


def lipschitz_profile(branch) -> LipschitzProfile:
    """Max discrete predator gradient per beta, and the log-log trend over the tail"""
    betas = np.array([p.beta for p in branch.points])
    order = np.argsort(betas)
    grid = branch.grid
    gradients = np.array([max(max_gradient(grid, w) for w in branch.points[i].state.w)
                          for i in order])
    betas = betas[order]
    tail_b, tail_g = _tail(betas), _tail(gradients)
    if len(tail_b) < 2 or np.any(tail_g <= 0):
        slope = 0.0
    else:
        slope = float(np.polyfit(np.log(tail_b), np.log(tail_g), 1)[0])
    return LipschitzProfile(betas=betas, gradients=gradients, tail_slope=slope)


def energy_slack(params: ModelParams, grid: Grid, state: SystemState, i=0) -> float:
    """∫(k u - omega - mu_i w_i) w_i² - beta Σ_j a_ij ∫ w_i² w_j, nonnegative at solutions"""
    w_i = state.w[i]
    growth = params.kpred[i] * state.u - params.omega[i] - params.mu_self[i] * w_i
    competition = sum(params.a[i][j] * integrate(grid, w_i ** 2 * state.w[j])
                      for j in range(state.n_predators) if j != i)
    return integrate(grid, growth * w_i ** 2) - params.beta * competition


@dataclass(frozen=True)
class RangeCheck:
    ok: bool
    u_min: float
    u_max: float
    total_max: float
    u_bound: Optional[float]
    total_bound: Optional[float]


def range_check(params: ModelParams, state: SystemState, tol=1e-8) -> RangeCheck:
    """0 <= u <= lambda/mu and u + Σ w_i <= (lambda + omega) lambda / (mu omega)"""
    total = state.u + state.w.sum(axis=0)
    u_bound = total_bound = None
    ok = state.u.min() >= -tol
    if params.mu > 0:
        omega = min(params.omega)
        u_bound = params.lam / params.mu
        total_bound = (params.lam + omega) * params.lam / (params.mu * omega)
        ok = ok and state.u.max() <= u_bound + tol and total.max() <= total_bound + tol
    return RangeCheck(ok=bool(ok), u_min=float(state.u.min()), u_max=float(state.u.max()),
                      total_max=float(total.max()), u_bound=u_bound, total_bound=total_bound)


def _require_mu(params):
    if not params.mu > 0:
        raise ParamError("the collapsing limit lambda/mu needs mu > 0", field='mu')


def collapse_gap(params: ModelParams, beta) -> float:
    """|beta w - (lambda k - mu omega)/mu| on the symmetric constant family"""
    _require_mu(params)
    w = symmetric_point(params, beta).w[0]
    return abs(beta * w - params.viability[0] / params.mu)


def collapse_gap_bound(params: ModelParams, beta) -> float:
    _require_mu(params)
    k = params.kpred[0]
    return params.viability[0] * 2 * k ** 2 / (params.mu ** 2 * beta)


def type_d_family(params: ModelParams, grid: Grid, betas) -> List[SystemState]:
    return [SystemState.constant(grid, symmetric_point(params, beta)) for beta in betas]


def _support_laplacian(grid: Grid, f, support):
    """Second difference with antireflected ghosts across the support edge
    and reflected ghosts at the domain boundary"""
    values = f.reshape(grid.shape)
    inside = support.reshape(grid.shape)
    out = np.zeros(grid.shape)
    for axis, h in enumerate(grid.spacing):
        for shift in (1, -1):
            neighbour = np.roll(values, shift, axis=axis)
            neighbour_in = np.roll(inside, shift, axis=axis)
            edge = [slice(None)] * grid.dim
            edge[axis] = 0 if shift == 1 else -1
            neighbour[tuple(edge)] = values[tuple(edge)]
            neighbour_in[tuple(edge)] = True
            ghost = np.where(neighbour_in, neighbour, -values)
            out += (ghost - values) / h ** 2
    return out.ravel()


@dataclass(frozen=True)
class SegregatedResidual:
    predators: Tuple[float, ...]
    prey: float

    @property
    def worst(self):
        return max(self.predators + (self.prey,))


def segregated_residual(params: ModelParams, grid: Grid, state: SystemState,
                        tol=1e-12) -> SegregatedResidual:
    """Residual of the infinite-competition problem.

    Each predator equation is evaluated on its own support (Dirichlet at the support
    edge), without competition; the prey equation holds everywhere.
    """
    fw, fu = reaction_arrays(params.with_beta(0.0), state.w, state.u)
    predators = []
    for i, w in enumerate(state.w):
        support = w > tol * max(np.abs(w).max(), 1.0)
        if not support.any():
            predators.append(0.0)
            continue
        r = params.d[i] * _support_laplacian(grid, w, support) + fw[i]
        predators.append(float(np.abs(r[support]).max()))
    prey = params.dprey * (grid.laplacian @ state.u) + fu
    return SegregatedResidual(predators=tuple(predators), prey=float(np.abs(prey).max()))
