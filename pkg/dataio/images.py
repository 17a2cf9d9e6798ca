"""
图像读写。内部一律用 [0, 1] 的浮点数组，磁盘上是 8/16 位灰度 PNG 或 PGM。
"""
import gzip
import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from vesselseg.exceptions import DataError, ShapeError

logger = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
SUFFIX_FORMATS = {'.png': 'PNG', '.pgm': 'PPM', '.ppm': 'PPM'}


def _open(path):
    path = Path(path)
    if path.suffix == '.gz':
        with gzip.open(path, 'rb') as f:
            return Image.open(f).copy()
    return Image.open(path)


def read_image(path):
    """返回 (H, W) 或 (H, W, 3) 的 float64 数组，取值 [0, 1]"""
    try:
        img = _open(path)
        img.load()
    except FileNotFoundError as exc:
        raise DataError('Missing image', [path]) from exc
    except (UnidentifiedImageError, OSError, EOFError) as exc:
        raise DataError('Cannot decode image', [path]) from exc

    if img.mode.startswith('I'):
        return np.asarray(img, dtype=np.float64) / 65535.0
    if img.mode in ('RGBA', 'CMYK', 'YCbCr'):
        img = img.convert('RGB')
    elif img.mode in ('P', '1', 'LA'):
        img = img.convert('L')
    return np.asarray(img, dtype=np.float64) / 255.0


def read_mask(path):
    image = read_image(path)
    # 有的标注文件存成彩色 PPM
    if image.ndim == 3:
        image = to_grayscale(image)
    return image >= 0.5


def to_grayscale(rgb):
    """亮度加权 0.299R + 0.587G + 0.114B"""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError('to_grayscale expects an (H, W, 3) image, got shape {}'.format(rgb.shape))
    if np.issubdtype(rgb.dtype, np.integer):
        rgb = rgb / float(np.iinfo(rgb.dtype).max)
    return rgb.astype(np.float64) @ LUMA


def green_channel(rgb):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError('green_channel expects an (H, W, 3) image, got shape {}'.format(rgb.shape))
    if np.issubdtype(rgb.dtype, np.integer):
        rgb = rgb / float(np.iinfo(rgb.dtype).max)
    return rgb[..., 1].astype(np.float64)


def grayscale(image, mode='luma'):
    """已经是灰度图的原样返回"""
    if np.ndim(image) == 2:
        return np.asarray(image, dtype=np.float64)
    if mode == 'green':
        return green_channel(image)
    return to_grayscale(image)


def invert(gray):
    return 1.0 - np.asarray(gray, dtype=np.float64)


def save_image(path, array, bits=8):
    """按后缀选格式；16 位用 Pillow 的 'I' 模式写出"""
    path = Path(path)
    fmt = SUFFIX_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise DataError('Unsupported image suffix {}'.format(path.suffix), [path])
    values = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        img = Image.fromarray(np.round(values * 255).astype(np.uint8), mode='L')
    elif bits == 16:
        img = Image.fromarray(np.round(values * 65535).astype(np.int32), mode='I')
    else:
        raise DataError('Unsupported bit depth {}'.format(bits), [path])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        img.save(path, format=fmt)
    except OSError as exc:
        raise DataError('Cannot write image', [path]) from exc
    return path


def save_mask(path, mask):
    return save_image(path, np.asarray(mask, dtype=np.float64), bits=8)


def save_prob_map(path, prob):
    """概率图存 16 位，保证 ROC 的精度"""
    return save_image(path, prob, bits=16)
