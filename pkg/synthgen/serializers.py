import math

from rest_framework import serializers

from dataio.fields import NumberPairField
from synthgen.config import GeneratorConfig
from vesselseg.exceptions import ConfigurationError


class GeneratorConfigSerializer(serializers.Serializer):
    """校验生成器参数，save() 返回 GeneratorConfig"""
    image_size = serializers.IntegerField(min_value=1)
    circle_center = NumberPairField()
    circle_radius = serializers.FloatField()
    max_nodes = serializers.IntegerField(min_value=1)
    max_children = serializers.IntegerField(min_value=1)
    mean_length = serializers.FloatField()
    sigma_length = serializers.FloatField(min_value=0)
    branch_angle = serializers.FloatField()
    sigma_angle = serializers.FloatField(min_value=0)
    line_width = serializers.IntegerField(min_value=1)
    gray_range = NumberPairField()
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1)

    default_error_messages = {
        'positive': 'Must be greater than 0.',
        'branch_angle': 'Branch angle must lie in (0, pi), got {value}.',
        'gray_range': 'Gray range must satisfy 0 < lo <= hi <= 1, got {value}.',
        'radius': 'circle_radius must satisfy 0 < r <= image_size/2.',
        'circle_outside': 'Circle ({cx}, {cy}) r={r} does not fit inside a {size}x{size} image.',
    }

    def validate_circle_radius(self, value):
        if value <= 0:
            self.fail('positive')
        return value

    def validate_mean_length(self, value):
        if value <= 0:
            self.fail('positive')
        return value

    def validate_branch_angle(self, value):
        if not 0 < value < math.pi:
            self.fail('branch_angle', value=value)
        return value

    def validate_gray_range(self, value):
        lo, hi = value
        if not 0 < lo <= hi <= 1:
            self.fail('gray_range', value=value)
        return value

    def validate(self, attrs):
        size = attrs['image_size']
        radius = attrs['circle_radius']
        cx, cy = attrs['circle_center']
        if radius > size / 2:
            raise serializers.ValidationError({'circle_radius': self.error_messages['radius']})
        # 像素坐标范围是 0..size-1
        if cx - radius < 0 or cy - radius < 0 or cx + radius > size - 1 or cy + radius > size - 1:
            raise serializers.ValidationError({
                'circle_center': self.error_messages['circle_outside'].format(
                    cx=cx, cy=cy, r=radius, size=size)
            })
        return attrs

    def create(self, validated_data):
        return GeneratorConfig(**validated_data)

    @classmethod
    def build(cls, params):
        serializer = cls(data=params)
        if not serializer.is_valid():
            raise ConfigurationError(serializer.errors)
        return serializer.save()
