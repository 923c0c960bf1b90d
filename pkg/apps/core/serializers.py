from rest_framework import serializers

from .exceptions import ParamError
from .params import ModelParams, StatePoint


class StrictSerializerMixin:
    """Reject keys the serializer does not declare"""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError(
                    {key: ['Unknown field.'] for key in unknown})
        return super().to_internal_value(data)


def error_field(detail, prefix=''):
    """First (dotted field path, message) pair of a DRF error detail"""
    if isinstance(detail, dict):
        for key, value in detail.items():
            path = key if not prefix else f'{prefix}.{key}'
            if key in ('non_field_errors',):
                path = prefix or None
            return error_field(value, path)
    if isinstance(detail, list):
        for index, value in enumerate(detail):
            if isinstance(value, (dict, list)) and value:
                return error_field(value, f'{prefix}.{index}' if prefix else str(index))
            if value:
                return prefix or None, str(value)
    return prefix or None, str(detail)


class ModelParamsSerializer(StrictSerializerMixin, serializers.Serializer):
    mu = serializers.FloatField()
    n_predators = serializers.IntegerField(required=False, min_value=1)
    omega = serializers.ListField(child=serializers.FloatField(), min_length=1)
    kpred = serializers.ListField(child=serializers.FloatField(), min_length=1)
    mu_self = serializers.ListField(child=serializers.FloatField(), required=False)
    d = serializers.ListField(child=serializers.FloatField(), required=False)
    dprey = serializers.FloatField(required=False, default=1.0)
    beta = serializers.FloatField(required=False, default=0.0)
    a = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField()), required=False)
    symmetric = serializers.BooleanField(required=False, default=True)

    def get_fields(self):
        fields = super().get_fields()
        # 'lambda' is a keyword, so it cannot be declared as a class attribute
        fields['lambda'] = serializers.FloatField()
        return fields

    def validate(self, attrs):
        try:
            ModelParams.from_dict(attrs)
        except ParamError as e:
            raise serializers.ValidationError({e.field or 'non_field_errors': [e.message]})
        return attrs

    def to_representation(self, instance):
        if isinstance(instance, ModelParams):
            return instance.to_dict()
        return super().to_representation(instance)

    def to_params(self) -> ModelParams:
        return ModelParams.from_dict(self.validated_data)


class StatePointSerializer(serializers.Serializer):
    w = serializers.ListField(child=serializers.FloatField())
    u = serializers.FloatField()

    def to_representation(self, instance):
        if isinstance(instance, StatePoint):
            return {'w': list(instance.w), 'u': instance.u}
        return super().to_representation(instance)


class HypothesisReportSerializer(serializers.Serializer):
    h_holds = serializers.ListField(child=serializers.BooleanField())
    reduced_rate = serializers.ListField(child=serializers.FloatField())
    nonresonance_margin = serializers.ListField(
        child=serializers.FloatField(allow_null=True))
    resonant_modes = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField()))
    warnings = serializers.ListField(child=serializers.CharField())
