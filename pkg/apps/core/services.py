import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from django.conf import settings

from .exceptions import ParamError
from .params import HypothesisReport, ModelParams, StatePoint

logger = logging.getLogger(__name__)

RESONANCE_TOL = 1e-8


def reaction_arrays(params: ModelParams, w, u):
    """Vectorized reaction term.

    ``w`` has shape (N,) or (N, m) and ``u`` shape () or (m,); returns the
    predator and prey components with the same shapes.
    """
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    column = (-1,) + (1,) * (w.ndim - 1)
    omega = params.omega_array.reshape(column)
    k = params.k_array.reshape(column)
    mu_self = params.mu_self_array.reshape(column)

    growth = -omega + k * u - mu_self * w - params.beta * (params.a_matrix @ w)
    fw = growth * w
    fu = (params.lam - params.mu * u - (k * w).sum(axis=0)) * u
    return fw, fu


def reaction(params: ModelParams, s: StatePoint) -> StatePoint:
    fw, fu = reaction_arrays(params, np.asarray(s.w), s.u)
    return StatePoint(w=tuple(fw), u=fu)


def reaction_jacobian_field(params: ModelParams, w, u):
    """Pointwise Jacobian blocks, shape (N+1, N+1) + u.shape.

    Entry [c, c'] is the derivative of reaction component c with respect to
    component c' at every node.
    """
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    n = params.n_predators
    column = (-1,) + (1,) * (w.ndim - 1)
    omega = params.omega_array.reshape(column)
    k = params.k_array.reshape(column)
    mu_self = params.mu_self_array.reshape(column)
    a = params.a_matrix.reshape((n, n) + (1,) * (w.ndim - 1))

    growth = -omega + k * u - mu_self * w - params.beta * (params.a_matrix @ w)
    jac = np.zeros((n + 1, n + 1) + u.shape)
    jac[:n, :n] = -params.beta * a * w[:, None]
    idx = np.arange(n)
    jac[idx, idx] += growth - mu_self * w
    jac[:n, n] = k * w
    jac[n, :n] = -k * u
    jac[n, n] = params.lam - 2.0 * params.mu * u - (k * w).sum(axis=0)
    return jac


def reaction_jacobian(params: ModelParams, s: StatePoint) -> np.ndarray:
    return reaction_jacobian_field(params, np.asarray(s.w), np.asarray(s.u))


def check_hypotheses(params: ModelParams, spectrum=None, tol=RESONANCE_TOL) -> HypothesisReport:
    """Viability flags, reduced rates and their distance to the Neumann spectrum.

    The margin of predator i compares (lambda k_i - mu omega_i)/(mu d_i) with every
    eigenvalue of ``spectrum``; with unit diffusivity this is the reduced rate itself.
    """
    h_holds = tuple(bool(v > 0) for v in params.viability)
    if params.mu == 0:
        if spectrum is not None:
            raise ParamError("reduced rates (and resonance margins) need mu > 0", field='mu')
        return HypothesisReport(
            h_holds=h_holds,
            reduced_rate=tuple(np.inf for _ in h_holds),
            nonresonance_margin=tuple(None for _ in h_holds),
        )

    rates = params.viability / params.mu
    margins = []
    resonant = []
    warnings = []
    for i, rate in enumerate(rates):
        if spectrum is None:
            margins.append(None)
            continue
        scaled = rate / params.d[i]
        gaps = np.abs(np.asarray(spectrum.eigenvalues) - scaled)
        n = int(np.argmin(gaps))
        margins.append(float(gaps[n]))
        if gaps[n] <= tol * max(1.0, abs(scaled)):
            message = (f"predator {i + 1}: reduced rate {scaled:.10g} resonates with "
                       f"Neumann eigenvalue gamma_{n} = {spectrum.eigenvalues[n]:.10g}")
            logger.warning(message)
            resonant.append((i, n))
            warnings.append(message)

    return HypothesisReport(
        h_holds=h_holds,
        reduced_rate=tuple(float(r) for r in rates),
        nonresonance_margin=tuple(margins),
        resonant_modes=tuple(resonant),
        warnings=tuple(warnings),
    )


def reduce_parameters(params: ModelParams) -> ModelParams:
    """Unit-diffusivity form of a symmetric two-predator system.

    A stationary solution (w, u') of the returned system gives the stationary
    solution (w, (d/D) u') of the original one.
    """
    if not params.is_symmetric_pair:
        raise ParamError("reduction needs two identical predators with symmetric competition",
                         field='omega')
    d, big_d = params.d[0], params.dprey
    return ModelParams.symmetric_pair(
        lam=params.lam / big_d,
        mu=params.mu * d / big_d ** 2,
        omega=params.omega[0] / d,
        kpred=params.kpred[0] / big_d,
        mu_self=params.mu_self[0] / d,
        beta=params.beta / d,
        a=params.a[0][1],
    )


def expand_parameters(reduced: ModelParams, d: float, dprey: float) -> ModelParams:
    """Inverse of :func:`reduce_parameters` for predator diffusivity d and prey diffusivity dprey"""
    if not reduced.is_symmetric_pair:
        raise ParamError("expansion needs two identical predators", field='omega')
    if any(x != 1.0 for x in reduced.diffusivities):
        raise ParamError("reduced parameters must have unit diffusivities", field='d')
    if d <= 0 or dprey <= 0:
        raise ParamError("diffusivities must be positive", field='d')
    return ModelParams.symmetric_pair(
        lam=reduced.lam * dprey,
        mu=reduced.mu * dprey ** 2 / d,
        omega=reduced.omega[0] * d,
        kpred=reduced.kpred[0] * dprey,
        mu_self=reduced.mu_self[0] * d,
        d=d,
        dprey=dprey,
        beta=reduced.beta * d,
        a=reduced.a[0][1],
    )


def reduce_state(point: StatePoint, d: float, dprey: float) -> StatePoint:
    return StatePoint(w=point.w, u=point.u * dprey / d)


def expand_state(point: StatePoint, d: float, dprey: float) -> StatePoint:
    return StatePoint(w=point.w, u=point.u * d / dprey)


@dataclass(frozen=True)
class InvariantBox:
    """Asymptotic bounds of the absorbing region; None marks an unbounded component"""

    w_bounds: Tuple[Optional[float], ...]
    u_bound: Optional[float]

    @property
    def bounded(self):
        return self.u_bound is not None and all(b is not None for b in self.w_bounds)


def invariant_box(params: ModelParams) -> InvariantBox:
    u_bound = params.lam / params.mu if params.mu > 0 else None
    w_bounds = []
    for viability, mu_i in zip(params.viability, params.mu_self):
        if viability <= 0:
            # extinction: the component decays to zero
            w_bounds.append(0.0)
        elif params.mu > 0 and mu_i > 0:
            w_bounds.append(float(viability / (params.mu * mu_i)))
        else:
            w_bounds.append(None)
    return InvariantBox(w_bounds=tuple(w_bounds), u_bound=u_bound)


def spectral_norms(matrices):
    """Spectral norm of each matrix in a stack, via the largest eigenvalue of J^T J"""
    matrices = np.asarray(matrices)
    gram = np.swapaxes(matrices, -1, -2) @ matrices
    return np.sqrt(np.clip(np.linalg.eigvalsh(gram)[..., -1], 0.0, None))


def sup_spectral_norm(jacobian_fn, upper, lower=None, samples=50, max_points=200_000,
                      refinements=2):
    """Sampled sup of the spectral norm of ``jacobian_fn`` over a box.

    Uniform sampling (capped at ``max_points``) followed by ``refinements`` local
    passes around the current argmax, each four times finer than the last.
    ``jacobian_fn`` maps an (M, dim) array of points to an (M, n, n) stack.
    Returns (sup, argmax point).
    """
    upper = np.asarray(upper, dtype=float)
    lower = np.zeros_like(upper) if lower is None else np.asarray(lower, dtype=float)
    dim = upper.size
    per_axis = max(2, min(samples, int(np.floor(max_points ** (1.0 / dim)))))

    def scan(axes):
        mesh = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, dim)
        norms = spectral_norms(jacobian_fn(mesh))
        best = int(np.argmax(norms))
        return float(norms[best]), mesh[best]

    axes = [np.linspace(lo, hi, per_axis) if hi > lo else np.array([lo])
            for lo, hi in zip(lower, upper)]
    value, argmax = scan(axes)
    spacing = (upper - lower) / (per_axis - 1)
    for _ in range(refinements):
        axes = [np.unique(np.clip(c + np.linspace(-s, s, 9), lo, hi))
                for c, s, lo, hi in zip(argmax, spacing, lower, upper)]
        candidate, where = scan(axes)
        if candidate > value:
            value, argmax = candidate, where
        spacing = spacing / 4.0
    return value, argmax


def lipschitz_bound(params: ModelParams, samples=50, safety=None) -> float:
    """Lipschitz constant L of the reaction term on the absorbing box.

    Sampled sup of the Jacobian spectral norm, inflated by a safety factor
    (``PREDPACK_LIPSCHITZ_SAFETY``, 1.05 by default).
    """
    if params.mu == 0:
        raise ParamError("the absorbing box is unbounded when mu = 0", field='mu')
    if any(m == 0 for m in params.mu_self):
        raise ParamError("the absorbing box is unbounded when some mu_self = 0", field='mu_self')
    if safety is None:
        safety = getattr(settings, 'PREDPACK_LIPSCHITZ_SAFETY', 1.05)

    box = invariant_box(params)
    upper = list(box.w_bounds) + [box.u_bound]
    n = params.n_predators

    def jacobian_fn(points):
        jac = reaction_jacobian_field(params, points[:, :n].T, points[:, n])
        return np.moveaxis(jac, -1, 0)

    value, argmax = sup_spectral_norm(jacobian_fn, upper, samples=samples)
    logger.debug(f"Lipschitz sup {value:.6g} attained near {argmax}")
    return safety * value
