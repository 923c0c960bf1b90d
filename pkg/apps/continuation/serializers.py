from rest_framework import serializers


class BifurcationPointSerializer(serializers.Serializer):
    n = serializers.IntegerField()
    gamma_n = serializers.FloatField()
    beta_n = serializers.FloatField()
    multiplicity = serializers.IntegerField()
    odd = serializers.BooleanField()


class BranchSummarySerializer(serializers.Serializer):
    origin = BifurcationPointSerializer(allow_null=True)
    termination = serializers.CharField(source='termination_label', allow_null=True)
    points = serializers.SerializerMethodField()
    beta_range = serializers.SerializerMethodField()
    zero_counts = serializers.SerializerMethodField()
    max_residual = serializers.SerializerMethodField()

    def get_points(self, branch):
        return len(branch.points)

    def get_beta_range(self, branch):
        betas = branch.betas
        return [float(betas.min()), float(betas.max())] if len(betas) else []

    def get_zero_counts(self, branch):
        return sorted({z for z in branch.zero_counts if z is not None})

    def get_max_residual(self, branch):
        return max((p.residual for p in branch.points), default=None)
