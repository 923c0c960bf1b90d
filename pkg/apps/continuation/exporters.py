from pathlib import Path

from apps.core.exporters import read_csv, read_json, write_csv, write_json
from apps.core.params import ModelParams
from apps.evolution.exporters import read_state_csv, write_state_csv
from apps.grids.services import Grid

from .services import BifurcationPoint, Branch, BranchPoint, Termination

BRANCH_HEADER = ['beta', 'amplitude', 'zero_count', 'residual', 'snapshot']


def write_branch(directory, branch: Branch, prefix='branch'):
    """``<prefix>.csv`` (one row per point), ``<prefix>.json`` and one field snapshot per point"""
    directory = Path(directory)
    rows = []
    for index, point in enumerate(branch.points):
        name = f'{prefix}_{index:05d}.csv'
        write_state_csv(directory / name, point.state)
        zeros = '' if point.zero_count is None else point.zero_count
        rows.append([point.beta, point.amplitude, zeros, point.residual, name])
    write_csv(directory / f'{prefix}.csv', BRANCH_HEADER, rows)
    write_json(directory / f'{prefix}.json', {
        'origin': branch.origin.to_dict() if branch.origin else None,
        'termination': branch.termination_label,
        'params': branch.params.to_dict(),
        'grid': branch.grid.to_dict(),
        'points': len(branch.points),
    })
    return [f'{prefix}.csv', f'{prefix}.json'] + [row[-1] for row in rows]


def read_branch(directory, prefix='branch') -> Branch:
    directory = Path(directory)
    manifest = read_json(directory / f'{prefix}.json')
    grid = Grid.from_dict(manifest['grid'])
    _, rows = read_csv(directory / f'{prefix}.csv')
    points = []
    for beta, amp, zeros, residual, name in rows:
        state = read_state_csv(directory / name, grid)
        points.append(BranchPoint(beta=float(beta), state=state, residual=float(residual),
                                  zero_count=int(zeros) if zeros != '' else None,
                                  amplitude=float(amp)))
    label = manifest['termination']
    termination, reconnected_to = None, None
    if label:
        kind, _, rest = label.partition('(')
        termination = Termination(kind)
        if rest.rstrip(')') not in ('', 'None'):
            reconnected_to = int(rest.rstrip(')'))
    origin = manifest['origin']
    return Branch(params=ModelParams.from_dict(manifest['params']), grid=grid,
                  origin=BifurcationPoint.from_dict(origin) if origin else None, points=points,
                  termination=termination, reconnected_to=reconnected_to)
