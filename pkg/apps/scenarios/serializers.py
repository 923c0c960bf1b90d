from pathlib import Path

from rest_framework import serializers

from apps.core.params import ModelParams
from apps.core.serializers import ModelParamsSerializer, StatePointSerializer, StrictSerializerMixin
from apps.grids.serializers import GridSpecSerializer
from apps.grids.services import Grid

SCENARIOS = ('evolve', 'equilibria', 'bifurcate', 'continue', 'segregate', 'packs', 'optimize')

POSITIVE_OPTIONS = ('t_end', 'sample_every', 'epsilon', 'beta_max', 'ds0', 'eps', 'delta',
                    't_max', 'newton_tol')


class ScenarioOptionsSerializer(StrictSerializerMixin, serializers.Serializer):
    """Scenario-specific knobs; each scenario reads the ones it needs"""

    # evolve
    t_end = serializers.FloatField(required=False, default=10.0)
    sample_every = serializers.FloatField(required=False, default=0.1)
    window = serializers.IntegerField(required=False, default=10, min_value=1)
    epsilon = serializers.FloatField(required=False, default=1e-2)
    snapshot_every = serializers.IntegerField(required=False, min_value=1)
    initial_point = StatePointSerializer(required=False)
    perturbation = serializers.FloatField(required=False, default=0.0, min_value=0.0, max_value=1.0)

    # spectra
    modes = serializers.IntegerField(required=False, default=16, min_value=1)
    spectrum_source = serializers.ChoiceField(choices=['analytic', 'discrete'], required=False,
                                              default='analytic')

    # equilibria
    trials = serializers.IntegerField(required=False, min_value=1)

    # continuation and segregation
    mode = serializers.IntegerField(required=False, default=1, min_value=1)
    direction = serializers.ChoiceField(choices=[1, -1], required=False, default=1)
    beta_max = serializers.FloatField(required=False)
    max_steps = serializers.IntegerField(required=False, min_value=1)
    ds0 = serializers.FloatField(required=False, default=0.05)
    eps = serializers.FloatField(required=False)
    delta = serializers.FloatField(required=False, default=1e-2)
    threshold = serializers.FloatField(required=False, min_value=0.0)
    branch_dir = serializers.CharField(required=False)

    # optimizer
    n_max = serializers.IntegerField(required=False, default=2, min_value=1)
    beta_grid = serializers.ListField(child=serializers.FloatField(min_value=0.0), required=False,
                                      min_length=1, default=[10.0, 100.0])
    t_max = serializers.FloatField(required=False, default=200.0)

    newton_tol = serializers.FloatField(required=False)

    def validate(self, attrs):
        errors = {name: ['Must be positive.'] for name in POSITIVE_OPTIONS
                  if name in attrs and attrs[name] is not None and not attrs[name] > 0}
        if errors:
            raise serializers.ValidationError(errors)
        return attrs

    def validate_branch_dir(self, value):
        if not (Path(value) / 'branch.json').is_file():
            raise serializers.ValidationError(f'No branch manifest in {value}.')
        return value


class ScenarioConfigSerializer(StrictSerializerMixin, serializers.Serializer):
    scenario = serializers.ChoiceField(choices=SCENARIOS)
    params = ModelParamsSerializer()
    grid = GridSpecSerializer()
    seed = serializers.IntegerField(required=False, default=0, min_value=0)
    options = ScenarioOptionsSerializer(required=False, default=dict)
    initial_state = serializers.CharField(required=False)
    output_dir = serializers.CharField(required=False)

    def validate_initial_state(self, value):
        if not Path(value).is_file():
            raise serializers.ValidationError(f'File {value} does not exist.')
        return value

    def validate_options(self, value):
        # defaults of a nested serializer are only filled when the key is present
        if not value:
            options = ScenarioOptionsSerializer(data={})
            options.is_valid(raise_exception=True)
            return options.validated_data
        return value

    def to_params(self):
        return ModelParams.from_dict(self.validated_data['params'])

    def to_grid(self):
        return Grid.from_dict(self.validated_data['grid'])
