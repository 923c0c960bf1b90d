from rest_framework import serializers


class BoundViolationSerializer(serializers.Serializer):
    t = serializers.FloatField()
    component = serializers.IntegerField()
    value = serializers.FloatField()
    bound = serializers.FloatField()


class EvolveReportSerializer(serializers.Serializer):
    """Summary document of a run; samples go to CSV"""

    bound_violations = BoundViolationSerializer(many=True)
    transient_time = serializers.FloatField(allow_null=True)
    fitted_decay_rate = serializers.FloatField(allow_null=True)
    sigma = serializers.FloatField(allow_null=True)
    sigma_prime = serializers.FloatField(allow_null=True)
    snapshot_files = serializers.ListField(child=serializers.CharField())
    final_time = serializers.SerializerMethodField()
    sample_count = serializers.SerializerMethodField()

    def get_final_time(self, report):
        return report.final_state.t

    def get_sample_count(self, report):
        return len(report.samples)


class HomogenizationVerdictSerializer(serializers.Serializer):
    passed = serializers.BooleanField()
    fitted_rate = serializers.FloatField(allow_null=True)
    required_rate = serializers.FloatField()
    tail_samples = serializers.IntegerField()


class SigmaCriterionSerializer(serializers.Serializer):
    sigma = serializers.FloatField()
    d = serializers.FloatField()
    gamma1 = serializers.FloatField()
    lipschitz = serializers.FloatField()
