from rest_framework import serializers


class ComparabilitySerializer(serializers.Serializer):
    m = serializers.FloatField()
    beta = serializers.FloatField()


class LipschitzProfileSerializer(serializers.Serializer):
    betas = serializers.ListField(child=serializers.FloatField())
    gradients = serializers.ListField(child=serializers.FloatField())
    tail_slope = serializers.FloatField()
    bounded = serializers.BooleanField()
    spread = serializers.FloatField()


class FreeBoundarySerializer(serializers.Serializer):
    nodes = serializers.ListField(child=serializers.IntegerField())
    measure = serializers.FloatField()
    threshold = serializers.FloatField()
    interfaces = serializers.ListField(child=serializers.FloatField())


class RangeCheckSerializer(serializers.Serializer):
    ok = serializers.BooleanField()
    u_min = serializers.FloatField()
    u_max = serializers.FloatField()
    total_max = serializers.FloatField()
    u_bound = serializers.FloatField(allow_null=True)
    total_bound = serializers.FloatField(allow_null=True)
