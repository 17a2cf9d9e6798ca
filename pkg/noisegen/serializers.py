from rest_framework import serializers

from dataio.fields import NumberPairField
from noisegen.config import NoiseConfig
from vesselseg.exceptions import ConfigurationError


class NoiseConfigSerializer(serializers.Serializer):
    noise_mean = serializers.FloatField()
    noise_sigma = serializers.FloatField(min_value=0)
    max_patches = serializers.IntegerField(min_value=0)
    patch_size = serializers.IntegerField(min_value=1)
    frequency = serializers.FloatField()
    amplitude = serializers.FloatField(min_value=0)
    bias_range = NumberPairField()
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1)

    default_error_messages = {
        'frequency': 'Frequency must be greater than 0.',
        'bias_range': 'bias_range must satisfy lo <= hi, got {value}.',
        'patch_too_large': 'patch_size {patch} exceeds image_size {size}.',
    }

    def validate_frequency(self, value):
        if value <= 0:
            self.fail('frequency')
        return value

    def validate_bias_range(self, value):
        if value[0] > value[1]:
            self.fail('bias_range', value=value)
        return value

    def validate(self, attrs):
        # image_size 属于生成器参数，由调用方通过 context 传进来
        size = self.context.get('image_size')
        if size is not None and attrs['patch_size'] > size:
            raise serializers.ValidationError({
                'patch_size': self.error_messages['patch_too_large'].format(
                    patch=attrs['patch_size'], size=size)
            })
        return attrs

    def create(self, validated_data):
        return NoiseConfig(**validated_data)

    @classmethod
    def build(cls, params, image_size=None):
        serializer = cls(data=params, context={'image_size': image_size})
        if not serializer.is_valid():
            raise ConfigurationError(serializer.errors)
        return serializer.save()
