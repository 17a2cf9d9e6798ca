"""
一次运行的完整参数。优先级从低到高：
settings.VESSELSEG < 数据集变体 < --config 文件 < 命令行参数。
解析完成后先把结果写进输出目录的 resolved.cfg，再开始干活。
"""
import logging
from dataclasses import dataclass, fields
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

import vesselseg
from dataio.config import read_config, write_config
from evaluation.serializers import EvaluationConfigSerializer
from nn.network import NetworkSpec, default_spec
from nn.serializers import TrainingConfigSerializer
from noisegen.config import NoiseConfig, noise_defaults
from noisegen.serializers import NoiseConfigSerializer
from synthgen.config import GeneratorConfig, generator_defaults
from synthgen.serializers import GeneratorConfigSerializer
from vesselseg.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

RESOLVED_NAME = 'resolved.cfg'

GENERATOR_KEYS = [f.name for f in fields(GeneratorConfig)]
# 噪声和生成器共用一个 seed
NOISE_KEYS = [f.name for f in fields(NoiseConfig) if f.name != 'seed']
TRAINING_KEYS = list(TrainingConfigSerializer().fields)
EVALUATION_KEYS = list(EvaluationConfigSerializer().fields)
RUN_KEYS = ['variant', 'network', 'image_format', 'threads', 'deterministic']


class RunSettingsSerializer(serializers.Serializer):
    variant = serializers.ChoiceField(choices=[1, 2])
    # 网络结构 JSON 文件，default 表示内置的默认网络
    network = serializers.CharField()
    image_format = serializers.ChoiceField(choices=['png', 'pgm'])
    threads = serializers.IntegerField(min_value=1)
    deterministic = serializers.BooleanField()

    def validate_network(self, value):
        if value != 'default' and not Path(value).is_file():
            raise serializers.ValidationError('Network spec file {} does not exist.'.format(value))
        return value

    @classmethod
    def build(cls, data):
        serializer = cls(data=data)
        if not serializer.is_valid():
            raise ConfigurationError(serializer.errors)
        return dict(serializer.validated_data)


@dataclass
class RunConfig:
    generator: GeneratorConfig
    noise: NoiseConfig
    training: dict
    evaluation: dict
    run: dict

    @property
    def seed(self):
        return self.generator.seed

    @property
    def variant(self):
        return self.run['variant']

    def network_spec(self):
        if self.run['network'] == 'default':
            return default_spec()
        return NetworkSpec.from_file(self.run['network'])

    def flat(self):
        values = {key: self.run[key] for key in RUN_KEYS}
        gen = self.generator.as_dict()
        values.update((key, gen[key]) for key in GENERATOR_KEYS)
        noise = self.noise.as_dict()
        values.update((key, noise[key]) for key in NOISE_KEYS)
        values.update((key, self.training[key]) for key in TRAINING_KEYS)
        values.update((key, self.evaluation[key]) for key in EVALUATION_KEYS)
        return values

    def write(self, out_dir, command):
        path = Path(out_dir) / RESOLVED_NAME
        header = ['vesselseg {}'.format(vesselseg.__version__), 'command: {}'.format(command)]
        write_config(path, self.flat(), header=header)
        logger.info('resolved config written to %s', path)
        return path


def _run_defaults():
    conf = settings.VESSELSEG
    return {
        'variant': conf['DEFAULT_VARIANT'],
        'network': 'default',
        'image_format': conf['IMAGE_FORMAT'],
        'threads': conf['THREADS'],
        'deterministic': conf['DETERMINISTIC'],
    }


def _split(values):
    """按参数组拆开，遇到不认识的键直接报错"""
    groups = {'generator': {}, 'noise': {}, 'training': {}, 'evaluation': {}, 'run': {}}
    unknown = []
    for key, value in values.items():
        if key in RUN_KEYS:
            groups['run'][key] = value
        elif key == 'seed':
            groups['generator'][key] = value
        elif key in GENERATOR_KEYS:
            groups['generator'][key] = value
        elif key in NOISE_KEYS:
            groups['noise'][key] = value
        elif key in TRAINING_KEYS:
            groups['training'][key] = value
        elif key in EVALUATION_KEYS:
            groups['evaluation'][key] = value
        else:
            unknown.append(key)
    if unknown:
        raise ConfigurationError({key: ['Unknown configuration key.'] for key in unknown})
    return groups


def resolve_run_config(config_path=None, overrides=None):
    """
    overrides 是命令行给出的值，None 表示没给。
    variant 要先定下来，因为它决定了生成器和噪声的默认值。
    """
    file_values = read_config(config_path) if config_path else {}
    flag_values = {k: v for k, v in (overrides or {}).items() if v is not None}
    layered = [_split(file_values), _split(flag_values)]

    run = _run_defaults()
    for layer in layered:
        run.update(layer['run'])
    run = RunSettingsSerializer.build(run)
    variant = run['variant']

    gen = generator_defaults(variant)
    noise = noise_defaults(variant)
    training = dict(settings.VESSELSEG['TRAINING'])
    evaluation = dict(settings.VESSELSEG['EVALUATION'])
    for layer in layered:
        gen.update(layer['generator'])
        noise.update(layer['noise'])
        training.update(layer['training'])
        evaluation.update(layer['evaluation'])
    noise['seed'] = gen['seed']

    generator = GeneratorConfigSerializer.build(gen)
    return RunConfig(
        generator=generator,
        noise=NoiseConfigSerializer.build(noise, image_size=generator.image_size),
        training=TrainingConfigSerializer.build(training),
        evaluation=EvaluationConfigSerializer.build(evaluation),
        run=run,
    )


def parse_assignments(items):
    """命令行 --set key=value"""
    values = {}
    for item in items or ():
        if '=' not in item:
            raise ConfigurationError({'--set': ['Expected key=value, got {!r}.'.format(item)]})
        key, value = (part.strip() for part in item.split('=', 1))
        values[key] = value
    return values
