"""
给原始样本加背景噪声。
先在互不重叠的小块里加正弦噪声，最后整幅图加全局噪声。标签从不改动。
"""
import logging
import math
from collections import namedtuple

import numpy as np

from synthgen.generator import Sample, generate_raw
from vesselseg.exceptions import ConfigurationError
from vesselseg.seeding import derive_seed, get_rng

logger = logging.getLogger(__name__)

MAX_PATCH_ATTEMPTS = 100


class Patch(namedtuple('Patch', ['top', 'left', 'size'])):
    __slots__ = ()

    def overlaps(self, other):
        return (self.top < other.top + other.size and other.top < self.top + self.size
                and self.left < other.left + other.size and other.left < self.left + self.size)

    def slices(self):
        return slice(self.top, self.top + self.size), slice(self.left, self.left + self.size)


def add_global_noise(image, cfg, rng):
    """image + n_g + b，n_g 是独立同分布高斯场，b 是一个均匀分布的标量"""
    bias = rng.uniform(cfg.bias_range[0], cfg.bias_range[1])
    field = rng.normal(cfg.noise_mean, cfg.noise_sigma, size=image.shape)
    return np.clip(image + field + bias, 0.0, 1.0)


def select_patches(rng, image_size, patch_size, max_patches):
    """抽 n < N_max 个互不重叠的方块，拒绝采样，重试次数用完就少给几个"""
    if max_patches < 1:
        return []
    wanted = int(rng.integers(0, max_patches))
    patches = []
    span = image_size - patch_size + 1
    attempts = 0
    while len(patches) < wanted and attempts < MAX_PATCH_ATTEMPTS:
        attempts += 1
        top, left = (int(v) for v in rng.integers(0, span, size=2))
        candidate = Patch(top, left, patch_size)
        if any(candidate.overlaps(p) for p in patches):
            continue
        patches.append(candidate)
    if len(patches) < wanted:
        logger.info('placed %d of %d patches after %d attempts', len(patches), wanted, attempts)
    return patches


def sine_field(patch_size, frequency, amplitude, phase):
    """f(x, y) 取到方块左上角的欧氏距离，波前是同心圆弧"""
    yy, xx = np.mgrid[0:patch_size, 0:patch_size]
    return amplitude * np.sin(frequency * np.hypot(xx, yy) + phase)


def add_local_sine(image, patches, cfg, rng, phase=None):
    """
    每个方块只抽一次相位。逐像素抽相位会变成白噪声，
    而局部噪声应该是平滑变化的。
    """
    out = image.copy()
    for patch in patches:
        phi = rng.uniform(0.0, 2 * math.pi) if phase is None else phase
        rows, cols = patch.slices()
        out[rows, cols] += sine_field(patch.size, cfg.frequency, cfg.amplitude, phi)
    return np.clip(out, 0.0, 1.0)


def make_sample(gen_cfg, noise_cfg, seed):
    if noise_cfg.patch_size > gen_cfg.image_size:
        raise ConfigurationError({'patch_size': ['patch_size {} exceeds image_size {}.'.format(
            noise_cfg.patch_size, gen_cfg.image_size)]})
    raw = generate_raw(gen_cfg, seed)
    rng = get_rng(seed, stream=1)
    patches = select_patches(rng, gen_cfg.image_size, noise_cfg.patch_size, noise_cfg.max_patches)
    image = add_local_sine(raw.image, patches, noise_cfg, rng)
    image = add_global_noise(image, noise_cfg, rng)
    return Sample(image=image, label=raw.label, seed=seed, tree=raw.tree)


def iter_samples(gen_cfg, noise_cfg, base_seed, start=0, count=None):
    """第 i 个样本的种子是 derive_seed(base_seed, i)，从 start 开始无限供给"""
    index = start
    while count is None or index < start + count:
        yield index, make_sample(gen_cfg, noise_cfg, derive_seed(base_seed, index))
        index += 1
