from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from .exceptions import ParamError


def _as_tuple(values, name, n=None):
    if np.isscalar(values):
        if n is None:
            raise ParamError(f"{name} must be a list of per-predator values", field=name)
        values = [values] * n
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ParamError(f"{name} must contain numbers", field=name)
    if not all(np.isfinite(out)):
        raise ParamError(f"{name} must be finite", field=name)
    return out


def _frozen(array):
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the N-predator/one-prey system.

    Predator i obeys  w_i' = d_i Δw_i + (-omega_i + k_i u - mu_i w_i - beta Σ_j a_ij w_j) w_i,
    the prey obeys    u'   = D Δu     + (lambda - mu u - Σ_i k_i w_i) u,
    with homogeneous Neumann conditions. ``lam`` stands for lambda.
    """

    lam: float
    mu: float
    omega: Tuple[float, ...]
    kpred: Tuple[float, ...]
    mu_self: Tuple[float, ...] = None
    d: Tuple[float, ...] = None
    dprey: float = 1.0
    beta: float = 0.0
    a: Tuple[Tuple[float, ...], ...] = None
    symmetric: bool = True

    def __post_init__(self):
        omega = _as_tuple(self.omega, 'omega')
        n = len(omega)
        if n < 1:
            raise ParamError("at least one predator is required", field='omega')
        object.__setattr__(self, 'omega', omega)
        object.__setattr__(self, 'kpred', _as_tuple(self.kpred, 'kpred', n))
        object.__setattr__(
            self, 'mu_self', _as_tuple(0.0 if self.mu_self is None else self.mu_self, 'mu_self', n))
        object.__setattr__(
            self, 'd', _as_tuple(1.0 if self.d is None else self.d, 'd', n))
        for name in ('kpred', 'mu_self', 'd'):
            if len(getattr(self, name)) != n:
                raise ParamError(
                    f"{name} has {len(getattr(self, name))} entries for {n} predators", field=name)

        if self.a is None:
            a = tuple(tuple(0.0 if i == j else 1.0 for j in range(n)) for i in range(n))
        else:
            try:
                a = tuple(tuple(float(x) for x in row) for row in self.a)
            except (TypeError, ValueError):
                raise ParamError("a must be an N x N matrix of numbers", field='a')
        object.__setattr__(self, 'a', a)
        for name in ('lam', 'mu', 'dprey', 'beta'):
            object.__setattr__(self, name, float(getattr(self, name)))
        self._validate()

    def _validate(self):
        n = self.n_predators
        if not self.lam > 0:
            raise ParamError("lambda must be positive", field='lambda')
        if not self.mu >= 0:
            raise ParamError("mu must be nonnegative", field='mu')
        if not self.dprey > 0:
            raise ParamError("dprey must be positive", field='dprey')
        if not (self.beta >= 0 and np.isfinite(self.beta)):
            raise ParamError("beta must be finite and nonnegative", field='beta')
        if any(x <= 0 for x in self.omega):
            raise ParamError("omega entries must be positive", field='omega')
        if any(x <= 0 for x in self.kpred):
            raise ParamError("kpred entries must be positive", field='kpred')
        if any(x < 0 for x in self.mu_self):
            raise ParamError("mu_self entries must be nonnegative", field='mu_self')
        if any(x <= 0 for x in self.d):
            raise ParamError("diffusivities must be positive", field='d')
        if len(self.a) != n or any(len(row) != n for row in self.a):
            raise ParamError(f"a must be {n} x {n}", field='a')
        for i in range(n):
            if self.a[i][i] != 0.0:
                raise ParamError("a must have a zero diagonal", field='a')
            for j in range(n):
                if i != j and not self.a[i][j] > 0:
                    raise ParamError("off-diagonal entries of a must be positive", field='a')
        if self.symmetric and any(self.a[i][j] != self.a[j][i] for i in range(n) for j in range(n)):
            raise ParamError("symmetric mode requires a_ij == a_ji", field='a')

    @classmethod
    def identical(cls, n, lam, mu, omega, kpred, mu_self=0.0, d=1.0, dprey=1.0, beta=0.0, a=1.0):
        """N interchangeable predators with a uniform competition coefficient"""
        matrix = tuple(tuple(0.0 if i == j else float(a) for j in range(n)) for i in range(n))
        return cls(lam=lam, mu=mu, omega=(omega,) * n, kpred=(kpred,) * n,
                   mu_self=(mu_self,) * n, d=(d,) * n, dprey=dprey, beta=beta, a=matrix)

    @classmethod
    def symmetric_pair(cls, lam, mu, omega, kpred, **kwargs):
        return cls.identical(2, lam, mu, omega, kpred, **kwargs)

    @property
    def n_predators(self):
        return len(self.omega)

    @property
    def n_components(self):
        return self.n_predators + 1

    @cached_property
    def omega_array(self):
        return _frozen(np.asarray(self.omega))

    @cached_property
    def k_array(self):
        return _frozen(np.asarray(self.kpred))

    @cached_property
    def mu_self_array(self):
        return _frozen(np.asarray(self.mu_self))

    @cached_property
    def a_matrix(self):
        return _frozen(np.asarray(self.a))

    @cached_property
    def diffusivities(self):
        """(d_1, ..., d_N, D)"""
        return _frozen(np.asarray(self.d + (self.dprey,)))

    @cached_property
    def viability(self):
        """lambda k_i - mu omega_i per predator; positive means the predator is viable"""
        return _frozen(self.lam * self.k_array - self.mu * self.omega_array)

    @property
    def is_identical(self):
        n = self.n_predators
        same = all(len(set(getattr(self, name))) == 1
                   for name in ('omega', 'kpred', 'mu_self', 'd'))
        off = {self.a[i][j] for i in range(n) for j in range(n) if i != j}
        return same and len(off) <= 1

    @property
    def is_symmetric_pair(self):
        return self.n_predators == 2 and self.symmetric and self.is_identical

    def with_beta(self, beta):
        return replace(self, beta=float(beta))

    def with_predators(self, n):
        """Same coefficients as predator 1, replicated n times"""
        a = self.a[0][1] if self.n_predators > 1 else 1.0
        return ModelParams.identical(
            n, self.lam, self.mu, self.omega[0], self.kpred[0], mu_self=self.mu_self[0],
            d=self.d[0], dprey=self.dprey, beta=self.beta, a=a)

    def to_dict(self):
        return {
            'lambda': self.lam,
            'mu': self.mu,
            'n_predators': self.n_predators,
            'omega': list(self.omega),
            'kpred': list(self.kpred),
            'mu_self': list(self.mu_self),
            'd': list(self.d),
            'dprey': self.dprey,
            'beta': self.beta,
            'a': [list(row) for row in self.a],
            'symmetric': self.symmetric,
        }

    @classmethod
    def from_dict(cls, data):
        params = cls(
            lam=data['lambda'], mu=data['mu'], omega=data['omega'], kpred=data['kpred'],
            mu_self=data.get('mu_self'), d=data.get('d'), dprey=data.get('dprey', 1.0),
            beta=data.get('beta', 0.0), a=data.get('a'), symmetric=data.get('symmetric', True))
        if 'n_predators' in data and data['n_predators'] != params.n_predators:
            raise ParamError(
                f"n_predators={data['n_predators']} but {params.n_predators} omega values given",
                field='n_predators')
        return params


@dataclass(frozen=True)
class StatePoint:
    """Pointwise densities (w_1, ..., w_N, u)"""

    w: Tuple[float, ...]
    u: float

    def __post_init__(self):
        object.__setattr__(self, 'w', tuple(float(x) for x in np.atleast_1d(self.w)))
        object.__setattr__(self, 'u', float(self.u))

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(w=tuple(values[:-1]), u=values[-1])

    def as_array(self):
        return np.asarray(self.w + (self.u,))

    def is_physical(self, tol=1e-12):
        return min(self.w + (self.u,)) >= -tol

    def swapped(self, i=0, j=1):
        w = list(self.w)
        w[i], w[j] = w[j], w[i]
        return StatePoint(w=tuple(w), u=self.u)


@dataclass(frozen=True)
class HypothesisReport:
    h_holds: Tuple[bool, ...]
    reduced_rate: Tuple[float, ...]
    nonresonance_margin: Tuple[Optional[float], ...]
    resonant_modes: Tuple[Tuple[int, int], ...] = ()
    warnings: Tuple[str, ...] = field(default=())

    @property
    def all_hold(self):
        return all(self.h_holds)
