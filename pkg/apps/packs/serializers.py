from rest_framework import serializers


class PackBoundReportSerializer(serializers.Serializer):
    gamma_bar = serializers.FloatField()
    n_bar_exact = serializers.IntegerField()
    n_bar_weyl = serializers.FloatField()
    n_bar_weyl_corrected = serializers.FloatField()
    unit_ball_volume = serializers.FloatField()
    dim = serializers.IntegerField()
    measure = serializers.FloatField()


class PackCandidateSerializer(serializers.Serializer):
    n = serializers.IntegerField()
    requested_n = serializers.IntegerField(source='seeded_n')
    beta = serializers.FloatField()
    population = serializers.FloatField(allow_null=True)
    physical = serializers.BooleanField()
    converged = serializers.BooleanField()
    positive_count = serializers.IntegerField()
    residual = serializers.FloatField(allow_null=True)
    error = serializers.CharField(allow_null=True)


class IdentityResidualsSerializer(serializers.Serializer):
    population = serializers.FloatField()
    first_rhs = serializers.FloatField()
    first = serializers.FloatField()
    second = serializers.FloatField()


class OptimReportSerializer(serializers.Serializer):
    candidates = PackCandidateSerializer(many=True)
    best = PackCandidateSerializer(allow_null=True)
    alternative = serializers.CharField(allow_null=True)
    identity_residuals = IdentityResidualsSerializer(allow_null=True)
    n_bar = serializers.IntegerField(allow_null=True)


class DichotomyVerdictSerializer(serializers.Serializer):
    nonzero_components = serializers.IntegerField()
    n_bar = serializers.IntegerField()
    distance_to_prey_only = serializers.FloatField(allow_null=True)
    consistent = serializers.BooleanField()
