import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from django.conf import settings

from apps.core.exceptions import DimensionError, GridError

logger = logging.getLogger(__name__)

MIN_CELLS = 4
BOUNDARY_KINDS = ('neumann', 'dirichlet')


def second_difference(n, h, left='neumann', right='neumann'):
    """1D cell-centered second difference.

    Neumann ends use a reflected ghost value, Dirichlet ends an antireflected
    one (zero on the cell face).
    """
    for kind in (left, right):
        if kind not in BOUNDARY_KINDS:
            raise GridError(f"unknown boundary kind {kind!r}")
    main = np.full(n, -2.0)
    main[0] += 1.0 if left == 'neumann' else -1.0
    main[-1] += 1.0 if right == 'neumann' else -1.0
    off = np.ones(n - 1)
    return (sp.diags([off, main, off], [-1, 0, 1], format='csr') / h ** 2).tocsr()


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on an interval or a rectangle.

    Nodes are flattened in C order, so in 2D node (i, j) sits at i * n_y + j.
    """

    dim: int
    extents: Tuple[Tuple[float, float], ...]
    n_cells: Tuple[int, ...]

    @property
    def shape(self):
        return self.n_cells

    @property
    def size(self):
        return int(np.prod(self.n_cells))

    @property
    def lengths(self):
        return tuple(b - a for a, b in self.extents)

    @property
    def spacing(self):
        return tuple((b - a) / n for (a, b), n in zip(self.extents, self.n_cells))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def measure(self):
        return float(np.prod(self.lengths))

    @property
    def boundary_measure(self):
        """|∂Ω|: two endpoints in 1D, the perimeter in 2D"""
        if self.dim == 1:
            return 2.0
        return 2.0 * sum(self.lengths)

    @cached_property
    def axes(self):
        return tuple(a + (np.arange(n) + 0.5) * h
                     for (a, _), n, h in zip(self.extents, self.n_cells, self.spacing))

    @cached_property
    def nodes(self):
        mesh = np.meshgrid(*self.axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def weights(self):
        return np.full(self.size, self.cell_volume)

    @cached_property
    def laplacian(self):
        ops = [second_difference(n, h) for n, h in zip(self.n_cells, self.spacing)]
        if self.dim == 1:
            return ops[0]
        nx, ny = self.n_cells
        return (sp.kron(ops[0], sp.identity(ny)) + sp.kron(sp.identity(nx), ops[1])).tocsr()

    def laplacian_with(self, left='neumann', right='neumann'):
        """1D Laplacian with a chosen condition at each end"""
        if self.dim != 1:
            raise DimensionError("mixed boundary operators are only built on intervals")
        return second_difference(self.n_cells[0], self.spacing[0], left, right)

    def check_field(self, f, name='field'):
        f = np.asarray(f, dtype=float)
        if f.shape != (self.size,):
            raise GridError(f"{name} has shape {f.shape}, grid has {self.size} nodes", field=name)
        return f

    def to_dict(self):
        return {
            'dim': self.dim,
            'extents': [list(e) for e in self.extents],
            'n_cells': list(self.n_cells),
        }

    @classmethod
    def from_dict(cls, data):
        return build_grid(data['dim'], data['extents'], data['n_cells'])


def build_grid(dim, extents, n_cells) -> Grid:
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim}", field='dim')
    extents = np.asarray(extents, dtype=float)
    if extents.ndim == 1:
        extents = extents.reshape(1, -1)
    n_cells = np.atleast_1d(np.asarray(n_cells))
    if extents.shape != (dim, 2) or n_cells.shape != (dim,):
        raise GridError(f"need {dim} extents and {dim} cell counts", field='extents')
    if not np.all(np.isfinite(extents)) or np.any(extents[:, 1] <= extents[:, 0]):
        raise GridError("extents must be finite with a < b on every axis", field='extents')
    if np.any(n_cells != np.floor(n_cells)) or np.any(n_cells < MIN_CELLS):
        raise GridError(f"need at least {MIN_CELLS} cells per axis", field='n_cells')
    return Grid(dim=dim,
                extents=tuple((float(a), float(b)) for a, b in extents),
                n_cells=tuple(int(n) for n in n_cells))


def apply_laplacian(grid: Grid, f) -> np.ndarray:
    return grid.laplacian @ grid.check_field(f)


def integrate(grid: Grid, f) -> float:
    return float(grid.check_field(f).sum() * grid.cell_volume)


def inner_product(grid: Grid, f, g) -> float:
    f = grid.check_field(f, 'f')
    g = grid.check_field(g, 'g')
    return float(np.dot(f, g) * grid.cell_volume)


def gradient_norm(grid: Grid, f) -> float:
    """Discrete ‖∇f‖_{L²}, i.e. sqrt(-<f, Δf>)"""
    f = grid.check_field(f)
    return float(np.sqrt(max(0.0, -np.dot(f, grid.laplacian @ f) * grid.cell_volume)))


def gradient(grid: Grid, f):
    """Per-axis derivatives: central inside, one-sided second order at the ends"""
    values = grid.check_field(f).reshape(grid.shape)
    parts = np.gradient(values, *grid.spacing, edge_order=2)
    if grid.dim == 1:
        parts = [parts]
    return [p.ravel() for p in parts]


def max_gradient(grid: Grid, f) -> float:
    """Largest difference quotient between neighbouring nodes"""
    values = grid.check_field(f).reshape(grid.shape)
    return float(max(np.abs(np.diff(values, axis=axis)).max() / h
                     for axis, h in enumerate(grid.spacing)))


def max_second_difference(grid: Grid, f) -> float:
    values = grid.check_field(f).reshape(grid.shape)
    return float(max(np.abs(np.diff(values, n=2, axis=axis)).max()
                     for axis in range(grid.dim)))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending Neumann eigenvalues and L²-normalized eigenfunctions.

    Index 0 is the constant mode; ``gamma(n)`` uses that convention.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    source: str
    grid: Grid = field(repr=False)

    def __len__(self):
        return len(self.eigenvalues)

    def gamma(self, n):
        return float(self.eigenvalues[n])

    def _same(self, x, y):
        return abs(x - y) <= 1e-8 * max(1.0, abs(x), abs(y))

    def multiplicity(self, n):
        value = self.eigenvalues[n]
        return int(sum(self._same(value, other) for other in self.eigenvalues))

    def distinct(self):
        """[(first index, eigenvalue, multiplicity), ...]"""
        groups = []
        for index, value in enumerate(self.eigenvalues):
            if groups and self._same(groups[-1][1], value):
                first, first_value, count = groups[-1]
                groups[-1] = (first, first_value, count + 1)
            else:
                groups.append((index, float(value), 1))
        return groups

    def first_positive(self):
        for _, value, _ in self.distinct():
            if value > 0 and not self._same(value, 0.0):
                return value
        raise GridError("spectrum has no positive eigenvalue; request more modes")

    def count_below(self, value):
        return int(np.sum(self.eigenvalues < value))

    def to_records(self):
        return [{'index': i, 'eigenvalue': float(v), 'multiplicity': self.multiplicity(i)}
                for i, v in enumerate(self.eigenvalues)]


def _normalize(grid, vectors):
    """Unit L² norm under the grid quadrature, first nonzero nodal value positive"""
    out = []
    for v in vectors:
        v = v / np.sqrt(np.dot(v, v) * grid.cell_volume)
        nonzero = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())
        if nonzero.size and v[nonzero[0]] < 0:
            v = -v
        out.append(v)
    return np.array(out)


def _analytic(grid, m):
    if grid.dim == 1:
        (a, _), = grid.extents
        length, = grid.lengths
        x, = grid.axes
        values = [(np.pi * n / length) ** 2 for n in range(m)]
        vectors = [np.cos(np.pi * n * (x - a) / length) for n in range(m)]
        return np.array(values), _normalize(grid, vectors)

    (ax, _), (ay, _) = grid.extents
    lx, ly = grid.lengths
    nx, ny = grid.n_cells
    candidates = sorted(
        ((np.pi * p / lx) ** 2 + (np.pi * q / ly) ** 2, p, q)
        for p in range(min(nx, m)) for q in range(min(ny, m)))[:m]
    xx, yy = np.meshgrid(*grid.axes, indexing='ij')
    values = [c[0] for c in candidates]
    vectors = [(np.cos(np.pi * p * (xx - ax) / lx) * np.cos(np.pi * q * (yy - ay) / ly)).ravel()
               for _, p, q in candidates]
    return np.array(values), _normalize(grid, vectors)


def _discrete(grid, m):
    cap = getattr(settings, 'PREDPACK_DISCRETE_SPECTRUM_MAX_NODES', 4096)
    if grid.size > cap:
        raise GridError(f"discrete spectrum capped at {cap} nodes, grid has {grid.size}")
    matrix = -grid.laplacian.toarray()
    values, vectors = scipy.linalg.eigh(matrix, subset_by_index=[0, m - 1])
    scale = max(1.0, np.abs(values).max())
    values = np.where(np.abs(values) < 1e-12 * scale, 0.0, values)
    return values, _normalize(grid, vectors.T)


def neumann_spectrum(grid: Grid, m: int, source='analytic') -> Spectrum:
    if not 1 <= m <= grid.size:
        raise GridError(f"requested {m} modes on a grid with {grid.size} nodes", field='m')
    if source == 'analytic':
        values, vectors = _analytic(grid, m)
    elif source == 'discrete':
        values, vectors = _discrete(grid, m)
    else:
        raise GridError(f"unknown spectrum source {source!r}", field='source')
    logger.debug(f"{source} spectrum: {m} modes, gamma_max={values[-1]:.6g}")
    return Spectrum(eigenvalues=np.asarray(values, dtype=float), eigenfunctions=vectors,
                    source=source, grid=grid)


def modes_below(grid: Grid, ceiling: float, source='analytic', extra=1) -> Spectrum:
    """Smallest spectrum that contains every eigenvalue below ``ceiling`` plus ``extra`` more"""
    m = min(grid.size, 8)
    while True:
        spectrum = neumann_spectrum(grid, m, source)
        if spectrum.count_below(ceiling) + extra <= m or m == grid.size:
            return spectrum
        m = min(grid.size, 2 * m)
