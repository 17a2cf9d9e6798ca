from rest_framework import serializers

from evaluation.roc import STRATEGIES
from vesselseg.exceptions import ConfigurationError


class EvaluationConfigSerializer(serializers.Serializer):
    threshold = serializers.FloatField(min_value=0, max_value=1)
    roc_strategy = serializers.ChoiceField(choices=STRATEGIES)
    roc_grid = serializers.IntegerField(min_value=2)
    roc_distinct_limit = serializers.IntegerField(min_value=1)
    stare_fov_threshold = serializers.FloatField(min_value=0, max_value=1)
    stare_fov_erosion = serializers.IntegerField(min_value=0)
    gray_mode = serializers.ChoiceField(choices=['luma', 'green'])

    @classmethod
    def build(cls, data):
        serializer = cls(data=data)
        if not serializer.is_valid():
            raise ConfigurationError(serializer.errors)
        return dict(serializer.validated_data)
