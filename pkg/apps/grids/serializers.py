from rest_framework import serializers

from apps.core.exceptions import GridError
from apps.core.serializers import StrictSerializerMixin

from .services import build_grid


class GridSpecSerializer(StrictSerializerMixin, serializers.Serializer):
    dim = serializers.ChoiceField(choices=[1, 2])
    extents = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2),
        min_length=1, max_length=2)
    n_cells = serializers.ListField(child=serializers.IntegerField(), min_length=1, max_length=2)

    def validate(self, attrs):
        try:
            build_grid(attrs['dim'], attrs['extents'], attrs['n_cells'])
        except GridError as e:
            raise serializers.ValidationError({e.field or 'non_field_errors': [e.message]})
        return attrs

    def to_grid(self):
        data = self.validated_data
        return build_grid(data['dim'], data['extents'], data['n_cells'])


class SpectrumModeSerializer(serializers.Serializer):
    index = serializers.IntegerField()
    eigenvalue = serializers.FloatField()
    multiplicity = serializers.IntegerField()
