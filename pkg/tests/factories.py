import math

import factory

from apps.core.params import ModelParams
from apps.grids.services import Grid
from apps.scenarios.models import ScenarioRun


class SymmetricPairFactory(factory.Factory):
    """Two identical predators; the defaults are the reference system used across the tests"""

    class Meta:
        model = ModelParams

    lam = 1.0
    mu = 0.05
    omega = (1.0, 1.0)
    kpred = (1.0, 1.0)
    beta = 0.0


class IntervalFactory(factory.Factory):
    class Meta:
        model = Grid

    dim = 1
    extents = ((0.0, math.pi),)
    n_cells = (128,)


class RectangleFactory(factory.Factory):
    class Meta:
        model = Grid

    dim = 2
    extents = ((0.0, math.pi), (0.0, math.pi))
    n_cells = (16, 16)


class ScenarioRunFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = ScenarioRun

    scenario = 'bifurcate'
    config = factory.LazyFunction(dict)
    seed = 0
    status = 'success'
    exit_code = 0
    wall_time = 0.5
    output_dir = factory.Sequence(lambda n: f'runs/bifurcate-{n}')


def reference_config(scenario='bifurcate', **params):
    """Scenario config document for the reference system on (0, pi)"""
    data = {'lambda': 1.0, 'mu': 0.05, 'omega': [1.0, 1.0], 'kpred': [1.0, 1.0]}
    data.update(params)
    return {
        'scenario': scenario,
        'params': data,
        'grid': {'dim': 1, 'extents': [[0.0, math.pi]], 'n_cells': [64]},
    }
