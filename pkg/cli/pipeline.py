"""
几个命令共用的流程：搭训练器、准备批次、逐图预测和评估、打印汇总表。
"""
import logging
from pathlib import Path

import numpy as np
from rich.table import Table

from dataio.datasets import FundusCase, disk_fov, prepare_input
from dataio.images import read_image, read_mask, save_prob_map
from dataio.manifest import read_manifest, resolve
from evaluation.reports import best_case, evaluate_case, format_metric, mean_row, write_report_csv, write_roc_csv
from nn.checkpoint import load_checkpoint
from nn.network import Network
from nn.tensor import center_crop
from nn.training import Trainer, manifest_batches, prefetch, synthetic_batches
from noisegen.noise import iter_samples
from vesselseg.exceptions import DataError
from vesselseg.seeding import derive_seed, get_rng

logger = logging.getLogger(__name__)

# 同一个全局种子派生出的几条互不相干的随机流
INIT_STREAM = 2
SAMPLING_STREAM = 3
# 留出样本的基准种子用一个训练永远走不到的下标派生
HELDOUT_INDEX = 2 ** 62


def build_trainer(rc, out_dir, resume=None):
    if resume:
        checkpoint = load_checkpoint(resume)
        logger.info('resuming from %s at iteration %d', resume, checkpoint.iteration)
        return Trainer.from_checkpoint(checkpoint, rc.training, out_dir)
    net = Network(rc.network_spec(), dtype=rc.training['dtype'])
    net.init_weights(get_rng(rc.seed, stream=INIT_STREAM))
    logger.info('network: %s', ' -> '.join(net.summary()))
    return Trainer(net, rc.training, out_dir, rng=get_rng(rc.seed, stream=SAMPLING_STREAM))


def load_manifest_arrays(manifest_path):
    entries = read_manifest(manifest_path)
    if not entries:
        raise DataError('Manifest lists no samples', [manifest_path])
    images = [read_image(resolve(manifest_path, e.image)) for e in entries]
    labels = [read_mask(resolve(manifest_path, e.label)).astype(np.uint8) for e in entries]
    return images, labels


def training_batches(rc, trainer, source='synthetic', manifest=None):
    """
    合成数据按下标取样，与状态无关，可以放心预取；
    清单数据的抽样会推进 trainer.rng，预取会让保存下来的 rng 状态超前，所以不预取。
    """
    batch_size = rc.training['batch_size']
    if source == 'manifest':
        images, labels = load_manifest_arrays(manifest)
        return manifest_batches(images, labels, batch_size, trainer.rng)
    batches = synthetic_batches(rc.generator, rc.noise, rc.seed, batch_size, start_iteration=trainer.iteration)
    depth = 0 if rc.run['deterministic'] else rc.training['prefetch']
    return prefetch(batches, depth)


def heldout_cases(rc, count):
    """内存里生成的留出样本，FOV 是生成器的圆向外扩 line_width"""
    gen = rc.generator
    base = derive_seed(rc.seed, HELDOUT_INDEX)
    fov = disk_fov(gen.image_size, gen.circle_center, gen.circle_radius + gen.line_width)
    return [FundusCase(str(sample.seed), sample.image, sample.label.astype(bool), fov)
            for _, sample in iter_samples(gen, rc.noise, base, count=count)]


def predict_map(net, image, full_size=False):
    if full_size:
        return net.predict_full_size(image)
    return net.predict(image)


def _roc_strategy(rc, fov):
    strategy = rc.evaluation['roc_strategy']
    if strategy == 'distinct' and int(np.count_nonzero(fov)) > rc.evaluation['roc_distinct_limit']:
        logger.info('%d pixels in the field of view, switching to a %d-point threshold grid',
                    int(np.count_nonzero(fov)), rc.evaluation['roc_grid'])
        return 'grid'
    return strategy


def evaluate_cases(net, cases, rc, out_dir, fundus=True, full_size=False, progress=None):
    """逐图：预处理 -> 预测 -> 裁剪金标准和 FOV -> 指标。写出概率图、ROC 和汇总 CSV"""
    out_dir = Path(out_dir)
    reports = []
    for case in cases:
        x = prepare_input(case) if fundus else case.image
        prob = predict_map(net, x, full_size)
        truth = center_crop(case.truth, prob.shape)
        fov = center_crop(case.fov, prob.shape)
        report = evaluate_case(case.id, prob, truth, fov,
                               threshold=rc.evaluation['threshold'],
                               strategy=_roc_strategy(rc, fov),
                               grid=rc.evaluation['roc_grid'])
        save_prob_map(out_dir / 'prob' / '{}_prob.png'.format(case.id), prob)
        if report.curve is not None:
            (out_dir / 'roc').mkdir(parents=True, exist_ok=True)
            write_roc_csv(out_dir / 'roc' / '{}.csv'.format(case.id), report.curve)
        reports.append(report)
        if progress is not None:
            progress(case)
    write_report_csv(out_dir / 'report.csv', reports)
    return reports


def load_network(checkpoint_path):
    return load_checkpoint(checkpoint_path).build_network()


def report_table(reports, title):
    table = Table(title=title)
    for column in ('image', 'Sn', 'Sp', 'Acc', 'AUC'):
        table.add_column(column, justify='right')
    for report in reports:
        table.add_row(*report.row())
    if reports:
        table.add_row(*mean_row(reports), style='bold')
    return table


def best_case_line(reports):
    best = best_case(reports)
    if best is None:
        return 'no case with a defined AUC'
    return 'best case: {} (AUC {})'.format(best.case_id, format_metric(best.auc))
