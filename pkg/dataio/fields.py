from rest_framework import serializers


class NumberPairField(serializers.ListField):
    """
    两个数组成的区间或坐标，比如 gray_range 和 circle_center。
    配置文件里写成 "0.5, 1.0"，命令行也一样，所以字符串先按逗号拆开。
    """
    default_error_messages = {
        'pair': 'Expected exactly two numbers, got {count}.',
    }

    def __init__(self, **kwargs):
        kwargs.setdefault('child', serializers.FloatField())
        kwargs.setdefault('min_length', 2)
        kwargs.setdefault('max_length', 2)
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [part.strip() for part in data.split(',') if part.strip()]
        if isinstance(data, (list, tuple)) and len(data) != 2:
            self.fail('pair', count=len(data))
        return tuple(super().to_internal_value(data))

    def to_representation(self, data):
        return [self.child.to_representation(item) for item in data]
