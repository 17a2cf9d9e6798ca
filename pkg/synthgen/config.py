from dataclasses import dataclass, asdict

from django.conf import settings


@dataclass(frozen=True)
class GeneratorConfig:
    """线段树生成器的全部参数，只能通过 GeneratorConfigSerializer 构造"""
    image_size: int
    circle_center: tuple
    circle_radius: float
    max_nodes: int
    max_children: int
    mean_length: float
    sigma_length: float
    branch_angle: float
    sigma_angle: float
    line_width: int
    gray_range: tuple
    seed: int

    def as_dict(self):
        return asdict(self)


def generator_defaults(variant=None):
    """settings 里的默认几何参数，再叠加数据集变体的覆盖项"""
    conf = settings.VESSELSEG
    params = dict(conf['GENERATOR'])
    if variant is not None:
        params.update(conf['DATASET_VARIANTS'][int(variant)])
    return params


def build_generator_config(variant=None, **overrides):
    from synthgen.serializers import GeneratorConfigSerializer

    params = generator_defaults(variant)
    params.update({k: v for k, v in overrides.items() if v is not None})
    return GeneratorConfigSerializer.build(params)
