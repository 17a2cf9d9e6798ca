"""
DRIVE / STARE 加载器。只读，不会改动输入目录。

DRIVE（测试集）::

    <root>/test/images/01_test.tif
    <root>/test/1st_manual/01_manual1.gif      第一位观察者，作为金标准
    <root>/test/mask/01_test_mask.gif          官方 FOV

<root> 也可以直接指向 test 目录。

STARE::

    <root>/stare-images/im0001.ppm[.gz]
    <root>/labels-ah/im0001.ah.ppm[.gz]        第一位观察者

STARE 没有 FOV，按亮度阈值 + 最大连通域 + 腐蚀计算。
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.conf import settings
from scipy import ndimage

from dataio.config import read_config
from dataio.images import grayscale, invert, read_image, read_mask, to_grayscale
from dataio.manifest import read_manifest, resolve
from vesselseg.exceptions import DataError

logger = logging.getLogger(__name__)


@dataclass
class FundusCase:
    id: str
    image: np.ndarray
    truth: np.ndarray
    fov: np.ndarray


def _evaluation_setting(name):
    return settings.VESSELSEG['EVALUATION'][name]


def compute_fov(rgb, threshold=None, erosion=None):
    """亮度高于阈值的最大连通域，再腐蚀几个像素去掉边缘"""
    threshold = _evaluation_setting('stare_fov_threshold') if threshold is None else threshold
    erosion = _evaluation_setting('stare_fov_erosion') if erosion is None else erosion
    bright = to_grayscale(rgb) > threshold
    labels, count = ndimage.label(bright)
    if count == 0:
        return bright
    sizes = ndimage.sum_labels(bright, labels, index=np.arange(1, count + 1))
    fov = labels == (int(np.argmax(sizes)) + 1)
    if erosion:
        fov = ndimage.binary_erosion(fov, iterations=erosion)
    return fov


def _check_case(case_id, image, truth, fov):
    if not (image.shape[:2] == truth.shape == fov.shape):
        raise DataError('Case {}: image {}, truth {} and fov {} differ in shape'.format(
            case_id, image.shape, truth.shape, fov.shape))


def _find(directory, name):
    """数据集有的分发包是 gzip 压缩的，两种都认"""
    path = directory / name
    if path.exists():
        return path
    gz = directory / (name + '.gz')
    if gz.exists():
        return gz
    return None


def _drive_root(root):
    root = Path(root)
    if (root / 'test' / 'images').is_dir():
        return root / 'test'
    return root


def load_drive(root, gray_mode='luma'):
    base = _drive_root(root)
    images_dir = base / 'images'
    if not images_dir.is_dir() or not any(images_dir.iterdir()):
        logger.warning('No DRIVE images found under %s', root)
        return []

    cases = []
    for image_path in sorted(images_dir.glob('*_test.tif')):
        case_id = image_path.name.split('_')[0]
        truth_path = base / '1st_manual' / '{}_manual1.gif'.format(case_id)
        mask_path = base / 'mask' / '{}_test_mask.gif'.format(case_id)
        missing = [p for p in (truth_path, mask_path) if not p.exists()]
        if missing:
            raise DataError('DRIVE case {} is incomplete'.format(case_id), missing)
        rgb = read_image(image_path)
        truth = read_mask(truth_path)
        fov = read_mask(mask_path)
        _check_case(case_id, rgb, truth, fov)
        cases.append(FundusCase(case_id, grayscale(rgb, gray_mode), truth, fov))
    if not cases:
        logger.warning('No DRIVE test images (*_test.tif) under %s', images_dir)
    return cases


def load_stare(root, gray_mode='luma', fov_threshold=None, fov_erosion=None):
    root = Path(root)
    images_dir = root / 'stare-images'
    labels_dir = root / 'labels-ah'
    if not images_dir.is_dir() or not any(images_dir.iterdir()):
        logger.warning('No STARE images found under %s', root)
        return []

    names = sorted({p.name.split('.')[0] for p in images_dir.iterdir() if p.name.startswith('im')})
    cases = []
    for case_id in names:
        image_path = _find(images_dir, case_id + '.ppm')
        truth_path = _find(labels_dir, case_id + '.ah.ppm')
        missing = []
        if image_path is None:
            missing.append(images_dir / (case_id + '.ppm'))
        if truth_path is None:
            missing.append(labels_dir / (case_id + '.ah.ppm'))
        if missing:
            raise DataError('STARE case {} is incomplete'.format(case_id), missing)
        rgb = read_image(image_path)
        truth = read_mask(truth_path)
        fov = compute_fov(rgb, fov_threshold, fov_erosion)
        _check_case(case_id, rgb, truth, fov)
        cases.append(FundusCase(case_id, grayscale(rgb, gray_mode), truth, fov))
    return cases


def prepare_input(case):
    """灰度 -> 反相，这是磁盘到网络输入之间唯一的变换"""
    logger.info('case %s: grayscale %dx%d -> invert', case.id, case.image.shape[1], case.image.shape[0])
    return invert(case.image)


def disk_fov(image_size, center, radius):
    """合成样本的视野：生成器圆盘（闭圆）"""
    ys, xs = np.mgrid[0:image_size, 0:image_size]
    return (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius ** 2


def load_synthetic(directory, manifest_name='manifest.tsv', fov_radius=None, center=None):
    """
    gen 命令的输出目录当作一个数据集。FOV 是生成器的圆再向外扩 line_width，
    圆的参数从目录里的 resolved.cfg 读出来；也可以由调用方直接给出。
    样本本身就是亮血管，不需要反相。
    """
    directory = Path(directory)
    manifest_path = directory / manifest_name
    if not manifest_path.exists():
        logger.warning('No sample manifest found under %s', directory)
        return []
    if fov_radius is None or center is None:
        values = read_config(directory / 'resolved.cfg')
        center = tuple(float(v) for v in values['circle_center'].split(','))
        fov_radius = float(values['circle_radius']) + int(values['line_width'])

    cases = []
    for entry in read_manifest(manifest_path):
        image_path = resolve(manifest_path, entry.image)
        label_path = resolve(manifest_path, entry.label)
        missing = [p for p in (image_path, label_path) if not p.exists()]
        if missing:
            raise DataError('Sample {} is incomplete'.format(entry.seed), missing)
        image = read_image(image_path)
        truth = read_mask(label_path)
        fov = disk_fov(truth.shape[0], center, fov_radius)
        _check_case(str(entry.seed), image, truth, fov)
        cases.append(FundusCase(str(entry.seed), image, truth, fov))
    return cases
