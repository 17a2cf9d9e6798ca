from rest_framework import serializers

from nn.network import NetworkSpec
from nn.tensor import DTYPES
from vesselseg.exceptions import ConfigurationError

# 没有全连接层这个选项，网络只能是全卷积的
LAYER_TYPES = ['conv', 'batchnorm', 'relu', 'maxpool', 'upsample', 'crop_concat']

LAYER_FIELDS = {
    'conv': ['kernel', 'in_channels', 'out_channels', 'stride', 'pad'],
    'batchnorm': ['channels'],
    'relu': [],
    'maxpool': [],
    'upsample': [],
    'crop_concat': ['source'],
}


class LayerSerializer(serializers.Serializer):
    type = serializers.ChoiceField(choices=LAYER_TYPES)
    kernel = serializers.IntegerField(min_value=1, required=False)
    in_channels = serializers.IntegerField(min_value=1, required=False)
    out_channels = serializers.IntegerField(min_value=1, required=False)
    stride = serializers.IntegerField(min_value=1, default=1)
    pad = serializers.IntegerField(min_value=0, default=0)
    channels = serializers.IntegerField(min_value=1, required=False)
    source = serializers.IntegerField(min_value=0, required=False)

    def validate(self, attrs):
        kind = attrs['type']
        missing = [name for name in LAYER_FIELDS[kind] if name not in attrs]
        if missing:
            raise serializers.ValidationError(
                'Layer type {} requires {}.'.format(kind, ', '.join(missing)))
        layer = {'type': kind}
        for name in LAYER_FIELDS[kind]:
            layer[name] = attrs[name]
        return layer


class NetworkSpecSerializer(serializers.Serializer):
    """逐层检查通道数是否对得上，最后一层必须是输出 2 通道的卷积"""
    input_channels = serializers.IntegerField(min_value=1, default=1)
    layers = LayerSerializer(many=True)

    default_error_messages = {
        'empty': 'A network needs at least one layer.',
        'channels': 'Layer {index} ({type}) expects {expected} input channels but receives {actual}.',
        'source': 'Layer {index}: crop_concat source {source} must refer to an earlier layer.',
        'head': 'The last layer must be a conv with out_channels=2 feeding the pixel-wise softmax.',
    }

    def validate(self, attrs):
        layers = [dict(layer) for layer in attrs['layers']]
        if not layers:
            self.fail('empty')
        channels = attrs['input_channels']
        produced = []
        for index, layer in enumerate(layers):
            kind = layer['type']
            if kind == 'conv':
                if layer['in_channels'] != channels:
                    self.fail('channels', index=index, type=kind, expected=layer['in_channels'], actual=channels)
                channels = layer['out_channels']
            elif kind == 'batchnorm':
                if layer['channels'] != channels:
                    self.fail('channels', index=index, type=kind, expected=layer['channels'], actual=channels)
            elif kind == 'crop_concat':
                if layer['source'] >= index:
                    self.fail('source', index=index, source=layer['source'])
                channels += produced[layer['source']]
            produced.append(channels)
        head = layers[-1]
        if head['type'] != 'conv' or head['out_channels'] != 2:
            self.fail('head')
        attrs['layers'] = layers
        return attrs

    def create(self, validated_data):
        return NetworkSpec(
            layers=tuple(validated_data['layers']),
            input_channels=validated_data['input_channels'],
        )

    @classmethod
    def build(cls, data):
        serializer = cls(data=data)
        if not serializer.is_valid():
            raise ConfigurationError(serializer.errors)
        return serializer.save()


class TrainingConfigSerializer(serializers.Serializer):
    iterations = serializers.IntegerField(min_value=0)
    batch_size = serializers.IntegerField(min_value=1)
    lr = serializers.FloatField(min_value=0)
    momentum = serializers.FloatField(min_value=0)
    checkpoint_every = serializers.IntegerField(min_value=0)
    log_every = serializers.IntegerField(min_value=1)
    dtype = serializers.ChoiceField(choices=sorted(DTYPES))
    check_finite = serializers.BooleanField()
    prefetch = serializers.IntegerField(min_value=0)

    def validate_momentum(self, value):
        if value >= 1:
            raise serializers.ValidationError('Momentum must be smaller than 1.')
        return value

    @classmethod
    def build(cls, data):
        serializer = cls(data=data)
        if not serializer.is_valid():
            raise ConfigurationError(serializer.errors)
        return dict(serializer.validated_data)
