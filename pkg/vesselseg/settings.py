"""
Django settings for vesselseg project.

Generated by 'django-admin startproject' using Django 4.1.1.

For more information on this file, see
https://docs.djangoproject.com/en/4.1/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.1/ref/settings/
"""
import math
import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    'VESSELSEG_SECRET_KEY',
    'django-insecure-vesselseg-offline-tool-no-web-surface'
)

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    # 自己写的
    'synthgen',
    'noisegen',
    'nn',
    'evaluation',
    'dataio',
    'cli',
]

# 这个工具没有网页和数据库，只有管理命令
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/4.1/topics/i18n/

LANGUAGE_CODE = 'zh-Hans'

TIME_ZONE = 'Asia/Shanghai'

USE_I18N = True

USE_TZ = True


# 日志。控制台用 rich 渲染
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'rich': {
            'format': '%(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'rich.logging.RichHandler',
            'formatter': 'rich',
            'show_path': False,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': os.environ.get('VESSELSEG_LOG_LEVEL', 'INFO'),
    },
}


# 所有算法参数的默认值都放在这里，和 REST_FRAMEWORK 配置块一个写法。
# 配置文件和命令行参数会覆盖这些值。
VESSELSEG = {
    # 生成器的默认几何参数（两个数据集共用）
    'GENERATOR': {
        'image_size': 128,
        'circle_center': [64, 64],
        'circle_radius': 56,
        'max_nodes': 30,
        'max_children': 3,
        'mean_length': 14.0,
        'sigma_length': 4.0,
        'branch_angle': 0.5,
        'sigma_angle': 0.25,
        'line_width': 3,
        'gray_range': [0.5, 1.0],
        'seed': 20170101,
    },
    # dataset#1：线更宽、对比度更高；dataset#2：单一细线、低对比度
    'DATASET_VARIANTS': {
        1: {
            'line_width': 3,
            'gray_range': [0.5, 1.0],
        },
        2: {
            'line_width': 1,
            'gray_range': [0.35, 0.6],
            # 细线需要更多节点才能让前景像素比例落在 [0.02, 0.15]
            'max_nodes': 60,
        },
    },
    'NOISE_VARIANTS': {
        1: {
            'noise_mean': 0.08,
            'noise_sigma': 0.04,
            'max_patches': 5,
            'patch_size': 48,
            'frequency': 2 * math.pi / 24,
            'amplitude': 0.08,
            'bias_range': [0.0, 0.2],
        },
        2: {
            'noise_mean': 0.12,
            'noise_sigma': 0.08,
            'max_patches': 5,
            'patch_size': 48,
            'frequency': 2 * math.pi / 16,
            'amplitude': 0.15,
            'bias_range': [0.0, 0.2],
        },
    },
    'DEFAULT_VARIANT': 2,
    'TRAINING': {
        'iterations': 5000,
        'batch_size': 2,
        'lr': 0.01,
        'momentum': 0.9,
        'checkpoint_every': 1000,
        'log_every': 50,
        'dtype': 'float32',
        # 每个迭代检查 NaN/Inf
        'check_finite': True,
        'prefetch': 4,
    },
    'EVALUATION': {
        'threshold': 0.5,
        'roc_strategy': 'distinct',
        'roc_grid': 256,
        # 像素数超过这个值时自动改用均匀阈值网格
        'roc_distinct_limit': 2000000,
        'stare_fov_threshold': 0.07,
        'stare_fov_erosion': 2,
        'gray_mode': 'luma',
    },
    'IMAGE_FORMAT': 'png',
    'THREADS': 1,
    # 所有路径本身都是逐位可复现的；打开后强制单线程、不预取
    'DETERMINISTIC': False,
}
