from dataclasses import dataclass, asdict

from django.conf import settings


@dataclass(frozen=True)
class NoiseConfig:
    """背景噪声的参数"""
    noise_mean: float
    noise_sigma: float
    max_patches: int
    patch_size: int
    frequency: float
    amplitude: float
    bias_range: tuple
    seed: int

    def as_dict(self):
        return asdict(self)


def noise_defaults(variant):
    conf = settings.VESSELSEG
    params = dict(conf['NOISE_VARIANTS'][int(variant)])
    params.setdefault('seed', conf['GENERATOR']['seed'])
    return params


def build_noise_config(variant, image_size=None, **overrides):
    from noisegen.serializers import NoiseConfigSerializer

    params = noise_defaults(variant)
    params.update({k: v for k, v in overrides.items() if v is not None})
    return NoiseConfigSerializer.build(params, image_size=image_size)
