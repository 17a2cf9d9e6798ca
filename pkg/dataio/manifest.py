"""
样本清单：每行一个样本，制表符分隔 seed / image / label / label_fraction，
路径相对于清单所在目录。
"""
from dataclasses import dataclass
from pathlib import Path

from vesselseg.exceptions import DataError

HEADER = ['seed', 'image', 'label', 'label_fraction']


@dataclass(frozen=True)
class ManifestEntry:
    seed: int
    image: str
    label: str
    label_fraction: float


def write_manifest(path, entries):
    path = Path(path)
    lines = ['\t'.join(HEADER)]
    for e in entries:
        lines.append('{}\t{}\t{}\t{:.6f}'.format(e.seed, e.image, e.label, e.label_fraction))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    except OSError as exc:
        raise DataError('Cannot write manifest', [path]) from exc
    return path


def read_manifest(path):
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as exc:
        raise DataError('Cannot read manifest', [path]) from exc
    if not lines or lines[0].split('\t') != HEADER:
        raise DataError('Not a sample manifest (bad header)', [path])
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        seed, image, label, fraction = line.split('\t')
        entries.append(ManifestEntry(int(seed), image, label, float(fraction)))
    return entries


def resolve(manifest_path, relative):
    return Path(manifest_path).parent / relative
