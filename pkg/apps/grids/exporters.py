from apps.core.exporters import read_json, read_numeric_csv, write_csv, write_json
from apps.core.exceptions import GridError

from .services import Grid

AXIS_NAMES = ('x', 'y')


def write_field_csv(path, grid: Grid, columns):
    """One row per node: x[,y] followed by the named columns.

    ``columns`` maps column name to a node array (use {'value': f} for a single field).
    """
    names = list(columns)
    arrays = [grid.check_field(columns[name], name) for name in names]
    header = list(AXIS_NAMES[:grid.dim]) + names
    rows = ([*node, *(a[i] for a in arrays)] for i, node in enumerate(grid.nodes))
    return write_csv(path, header, rows)


def read_field_csv(path):
    """(coordinates with shape (nodes, dim), {column name: values})"""
    header, data = read_numeric_csv(path)
    dim = sum(1 for name in header if name in AXIS_NAMES)
    if dim == 0:
        raise GridError(f"{path} has no coordinate columns")
    coords = data[:, :dim]
    return coords, {name: data[:, dim + i] for i, name in enumerate(header[dim:])}


def write_spectrum_json(path, spectrum):
    return write_json(path, {'source': spectrum.source, 'modes': spectrum.to_records()})


def read_spectrum_json(path):
    return read_json(path)
