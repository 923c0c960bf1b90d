import numpy as np

from apps.core.exceptions import GridError
from apps.core.exporters import read_numeric_csv, write_csv
from apps.grids.exporters import read_field_csv, write_field_csv

from .services import EvolveSample, SystemState


def state_columns(state: SystemState):
    columns = {f'w{i + 1}': w for i, w in enumerate(state.w)}
    columns['u'] = state.u
    return columns


def write_state_csv(path, state: SystemState):
    return write_field_csv(path, state.grid, state_columns(state))


def read_state_csv(path, grid, t=0.0) -> SystemState:
    coords, columns = read_field_csv(path)
    if coords.shape != grid.nodes.shape or not np.allclose(coords, grid.nodes):
        raise GridError(f"{path} was written on a different grid", field='initial_state')
    names = sorted((n for n in columns if n.startswith('w')), key=lambda n: int(n[1:]))
    return SystemState(grid=grid, w=np.array([columns[n] for n in names]), u=columns['u'], t=t)


def _sample_header(n_components):
    names = [f'w{i + 1}' for i in range(n_components - 1)] + ['u']
    return (['t'] + [f'mean_{n}' for n in names] + [f'sup_{n}' for n in names]
            + [f'grad_{n}' for n in names])


def write_samples_csv(path, samples):
    n = len(samples[0].means)
    rows = ([s.t, *s.means, *s.sups, *s.gradient_norms] for s in samples)
    return write_csv(path, _sample_header(n), rows)


def read_samples_csv(path):
    header, data = read_numeric_csv(path)
    n = (len(header) - 1) // 3
    return [EvolveSample(t=row[0], means=tuple(row[1:1 + n]), sups=tuple(row[1 + n:1 + 2 * n]),
                         gradient_norms=tuple(row[1 + 2 * n:1 + 3 * n]))
            for row in data]
