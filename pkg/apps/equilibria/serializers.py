from rest_framework import serializers

from apps.core.serializers import StatePointSerializer


class ConstantSolutionSerializer(serializers.Serializer):
    kind = serializers.CharField(source='label')
    point = StatePointSerializer()
    beta = serializers.FloatField()
    residual = serializers.FloatField()


class StabilityVerdictSerializer(serializers.Serializer):
    classification = serializers.CharField(source='classification.value')
    critical_mode = serializers.IntegerField()
    critical_eigenvalue = serializers.SerializerMethodField()
    min_real_part = serializers.FloatField()
    modes_checked = serializers.IntegerField()

    def get_critical_eigenvalue(self, verdict):
        value = complex(verdict.critical_eigenvalue)
        return [value.real, value.imag]


class CatalogEntrySerializer(serializers.Serializer):
    """One exported catalog record: the constant plus its stability verdict"""

    solution = ConstantSolutionSerializer()
    verdict = StabilityVerdictSerializer(allow_null=True)

    def to_representation(self, instance):
        solution, verdict = instance
        data = ConstantSolutionSerializer(solution).data
        if verdict is None:
            data.update(classification=None, min_real_part=None, critical_mode=None)
        else:
            data.update(StabilityVerdictSerializer(verdict).data)
        return data


class NewtonResultSerializer(serializers.Serializer):
    residual_norm = serializers.FloatField()
    iterations = serializers.IntegerField()
    converged = serializers.BooleanField()
    physical = serializers.BooleanField()


class RigidityScanSerializer(serializers.Serializer):
    beta = serializers.FloatField()
    trials = serializers.IntegerField()
    converged = serializers.IntegerField()
    landed = serializers.IntegerField()
    all_landed = serializers.BooleanField()
