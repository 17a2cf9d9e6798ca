"""
SGD + 动量训练。批次来源可以是实时生成的合成样本，也可以是清单里的已存样本。
同样的种子、同样的数据源，从 checkpoint 续训和一口气训练得到逐位相同的权重。
"""
import csv
import logging
import queue
import threading
from pathlib import Path

import numpy as np

from nn.checkpoint import checkpoint_from_network, save_checkpoint
from nn.loss import pixelwise_softmax_ce
from nn.tensor import assert_finite
from noisegen.noise import iter_samples
from vesselseg.seeding import get_rng, restore_rng, rng_state

logger = logging.getLogger(__name__)


class SGD:
    """v = momentum * v - lr * g;  p = p + v"""

    def __init__(self, net, lr=0.01, momentum=0.9, velocities=None):
        self.net = net
        self.lr = lr
        self.momentum = momentum
        self.velocities = {}
        for key, _, _, value in net.named_params():
            if velocities and key in velocities:
                self.velocities[key] = velocities[key].astype(value.dtype).copy()
            else:
                self.velocities[key] = np.zeros_like(value)

    def step(self):
        for key, layer, name, value in self.net.named_params():
            velocity = self.velocities[key]
            velocity *= self.momentum
            velocity -= self.lr * layer.grads[name]
            value += velocity


def synthetic_batches(gen_cfg, noise_cfg, base_seed, batch_size, start_iteration=0):
    """第 t 个批次由样本 t*b ... t*b+b-1 组成，与之前发生过什么无关"""
    samples = iter_samples(gen_cfg, noise_cfg, base_seed, start=start_iteration * batch_size)
    while True:
        chunk = [next(samples)[1] for _ in range(batch_size)]
        yield (np.stack([s.image for s in chunk])[:, None],
               np.stack([s.label for s in chunk]))


def manifest_batches(images, labels, batch_size, rng):
    """有放回随机抽样，抽样只用 rng，所以 checkpoint 里存下 rng 状态就能续训"""
    count = len(images)
    while True:
        picks = rng.integers(0, count, size=batch_size)
        yield (np.stack([images[i] for i in picks])[:, None],
               np.stack([labels[i] for i in picks]))


PREFETCH_THREAD_NAME = 'vesselseg-prefetch'


def prefetch(iterator, depth):
    """
    单个生产者线程 + 有界队列，顺序和直接迭代一致。
    depth 为 0 时不开线程。消费者关闭生成器后生产者线程随之退出。
    """
    if depth <= 0:
        yield from iterator
        return

    buffer = queue.Queue(maxsize=depth)
    sentinel = object()
    stop = threading.Event()

    def put(item):
        while not stop.is_set():
            try:
                buffer.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def produce():
        try:
            for item in iterator:
                if not put(item):
                    return
        except Exception as exc:  # 交给消费者线程重新抛出
            put(exc)
        put(sentinel)

    thread = threading.Thread(target=produce, name=PREFETCH_THREAD_NAME, daemon=True)
    thread.start()
    try:
        while True:
            item = buffer.get()
            if item is sentinel:
                return
            if isinstance(item, Exception):
                raise item
            yield item
    finally:
        stop.set()
        thread.join()


class Trainer:

    def __init__(self, net, config, out_dir, rng=None, velocities=None, start_iteration=0):
        self.net = net
        self.config = config
        self.out_dir = Path(out_dir)
        self.rng = rng if rng is not None else get_rng(0)
        self.optimizer = SGD(net, config['lr'], config['momentum'], velocities)
        self.iteration = start_iteration
        self.losses = []

    @classmethod
    def from_checkpoint(cls, checkpoint, config, out_dir):
        net = checkpoint.build_network()
        rng = restore_rng(checkpoint.rng_state) if checkpoint.rng_state else None
        return cls(net, config, out_dir, rng=rng, velocities=checkpoint.velocities,
                   start_iteration=checkpoint.iteration)

    def checkpoint(self):
        return checkpoint_from_network(self.net, self.iteration, rng_state(self.rng), self.optimizer.velocities)

    def save(self, name=None):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / (name or 'checkpoint_{:07d}.ckpt'.format(self.iteration))
        save_checkpoint(path, self.checkpoint())
        return path

    def step(self, images, labels):
        logits = self.net.forward(images, train=True)
        loss, d_logits = pixelwise_softmax_ce(logits, labels, crop_to_logits=True)
        where = 'iteration {}'.format(self.iteration)
        assert_finite(loss, 'the loss at ' + where, self.iteration, self.net.activation_norms)
        if self.config['check_finite']:
            assert_finite(d_logits, 'the loss gradient at ' + where, self.iteration, self.net.activation_norms)
        self.net.backward(d_logits)
        if self.config['check_finite']:
            for i, layer in enumerate(self.net.layers):
                for name, grad in layer.grads.items():
                    assert_finite(grad, '{}:{} {} gradient at {}'.format(i, layer.describe(), name, where),
                                  self.iteration, self.net.activation_norms)
        self.optimizer.step()
        self.iteration += 1
        return loss

    def run(self, batches, iterations, progress=None):
        """训练到第 iterations 次迭代为止，返回最后一个 checkpoint 的路径"""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        curve_path = self.out_dir / 'loss.csv'
        fresh = self.iteration == 0 or not curve_path.exists()
        every = self.config['checkpoint_every']
        with open(curve_path, 'w' if fresh else 'a', newline='') as f:
            writer = csv.writer(f)
            if fresh:
                writer.writerow(['iteration', 'loss'])
            while self.iteration < iterations:
                images, labels = next(batches)
                loss = self.step(images, labels)
                self.losses.append(loss)
                writer.writerow([self.iteration, repr(loss)])
                if self.iteration % self.config['log_every'] == 0:
                    logger.info('iteration %d loss %.6f', self.iteration, loss)
                if every and self.iteration % every == 0:
                    f.flush()
                    self.save()
                if progress is not None:
                    progress(self.iteration, loss)
        return self.save('final.ckpt')


def train(net, batches, iterations, out_dir, config, rng=None):
    """从头训练，返回最终的 Checkpoint。batch_size、lr、momentum、checkpoint_every 都在 config 里"""
    trainer = Trainer(net, config, out_dir, rng=rng)
    trainer.run(batches, iterations)
    return trainer.checkpoint()
