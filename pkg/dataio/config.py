"""
扁平的 key = value 配置文件，# 开头是注释，区间写成 "lo, hi"。
写出 -> 读入 -> 再写出得到完全相同的字节。
"""
from pathlib import Path

from vesselseg.exceptions import ConfigurationError, DataError


def format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ', '.join(format_value(v) for v in value)
    return str(value)


def parse_config(text, source='<config>'):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError({source: ['line {}: expected "key = value", got {!r}'.format(lineno, raw)]})
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigurationError({source: ['line {}: empty key'.format(lineno)]})
        values[key] = value
    return values


def read_config(path):
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as exc:
        raise DataError('Cannot read config file', [path]) from exc
    return parse_config(text, source=str(path))


def render_config(values, header=()):
    lines = ['# {}'.format(line) for line in header]
    lines += ['{} = {}'.format(key, format_value(value)) for key, value in values.items()]
    return '\n'.join(lines) + '\n'


def write_config(path, values, header=()):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_config(values, header), encoding='utf-8')
    except OSError as exc:
        raise DataError('Cannot write config file', [path]) from exc
    return path
