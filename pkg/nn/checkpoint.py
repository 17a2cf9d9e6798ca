"""
checkpoint 二进制格式（全部小端）：

    offset  size  内容
    0       8     magic b'VSEGCKPT'
    8       2     uint16 格式版本（当前为 1）
    10      2     uint16 保留，写 0
    12      4     uint32 头部长度 L
    16      L     UTF-8 JSON 头部：spec、iteration、dtype、rng_state、tensors 表
    16+L    ...   各张量的原始数据，按 tensors 表的 offset 依次排列

tensors 表每一项是 {name, dtype, shape, offset, nbytes}，offset 从数据区起点算。
名字形如 "3.weight"（第 3 层的参数）、"4.running_mean"（缓冲区）、
"velocity/3.weight"（SGD 动量）。
"""
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from nn.network import Network, NetworkSpec
from vesselseg.exceptions import DataError

logger = logging.getLogger(__name__)

MAGIC = b'VSEGCKPT'
FORMAT_VERSION = 1
_PREFIX = struct.Struct('<8sHHI')
VELOCITY_PREFIX = 'velocity/'


@dataclass
class Checkpoint:
    spec: NetworkSpec
    arrays: dict
    dtype: str
    iteration: int = 0
    rng_state: dict = None
    velocities: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def build_network(self):
        net = Network(self.spec, dtype=self.dtype)
        net.load_arrays(self.arrays)
        return net


def checkpoint_from_network(net, iteration=0, rng_state=None, velocities=None):
    return Checkpoint(
        spec=net.spec,
        arrays={key: value.copy() for key, value in net.state_arrays().items()},
        dtype=np.dtype(net.dtype).name,
        iteration=iteration,
        rng_state=rng_state,
        velocities={key: value.copy() for key, value in (velocities or {}).items()},
    )


def save_checkpoint(path, checkpoint):
    tensors = []
    blobs = []
    offset = 0
    items = list(checkpoint.arrays.items())
    items += [(VELOCITY_PREFIX + key, value) for key, value in checkpoint.velocities.items()]
    for name, value in items:
        array = np.ascontiguousarray(value)
        array = array.astype(array.dtype.newbyteorder('<'), copy=False)
        data = array.tobytes()
        tensors.append({
            'name': name,
            'dtype': array.dtype.str,
            'shape': list(array.shape),
            'offset': offset,
            'nbytes': len(data),
        })
        blobs.append(data)
        offset += len(data)

    header = json.dumps({
        'spec': checkpoint.spec.to_json(),
        'iteration': checkpoint.iteration,
        'dtype': checkpoint.dtype,
        'rng_state': checkpoint.rng_state,
        'tensors': tensors,
    }, sort_keys=True).encode('utf-8')

    with open(path, 'wb') as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, 0, len(header)))
        f.write(header)
        for data in blobs:
            f.write(data)
    logger.info('checkpoint written to %s (iteration %d)', path, checkpoint.iteration)
    return path


def load_checkpoint(path):
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as exc:
        raise DataError('Cannot read checkpoint', [path]) from exc

    if len(raw) < _PREFIX.size:
        raise DataError('Truncated checkpoint', [path])
    magic, version, _, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise DataError('Not a checkpoint file (bad magic)', [path])
    if version != FORMAT_VERSION:
        raise DataError('Unsupported checkpoint version {}'.format(version), [path])

    start = _PREFIX.size
    header = json.loads(raw[start:start + header_len].decode('utf-8'))
    data_start = start + header_len

    arrays = {}
    velocities = {}
    for entry in header['tensors']:
        begin = data_start + entry['offset']
        chunk = raw[begin:begin + entry['nbytes']]
        if len(chunk) != entry['nbytes']:
            raise DataError('Truncated tensor {}'.format(entry['name']), [path])
        array = np.frombuffer(chunk, dtype=np.dtype(entry['dtype'])).reshape(entry['shape']).copy()
        name = entry['name']
        if name.startswith(VELOCITY_PREFIX):
            velocities[name[len(VELOCITY_PREFIX):]] = array
        else:
            arrays[name] = array

    return Checkpoint(
        spec=NetworkSpec.from_json(header['spec']),
        arrays=arrays,
        dtype=header['dtype'],
        iteration=header['iteration'],
        rng_state=header['rng_state'],
        velocities=velocities,
        version=version,
    )
