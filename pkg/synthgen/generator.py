"""
原始样本生成：在空白背景上画一串首尾相连的线段，
画线的同时写出像素级标签，标签是免费得到的。

坐标约定：(x, y)，y 轴向下，角度从 +x 轴转向 +y 轴。
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from vesselseg.exceptions import GenerationError
from vesselseg.seeding import get_rng

logger = logging.getLogger(__name__)

# 每条分支最多重画 16 次，超过就认为这个节点已经长不出新分支了
MAX_BRANCH_RETRIES = 16
# 长度小于 2 像素的线段无法光栅化，重新抽样
MIN_LENGTH = 2.0


@dataclass
class Node:
    position: tuple
    direction: float
    children: int = 0


@dataclass
class Edge:
    parent: int
    child_position: tuple
    gray: float
    width: int
    # 取整之前的长度
    length: float


@dataclass
class VesselTree:
    """
    nodes[0] 是根节点（起点），不计入 N；
    之后每画一条线段就记录一个新节点。
    """
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)

    @property
    def node_count(self):
        return len(self.nodes) - 1

    def children_counts(self):
        counts = [0] * len(self.nodes)
        for edge in self.edges:
            counts[edge.parent] += 1
        return counts

    def lengths(self):
        return [edge.length for edge in self.edges]


@dataclass
class Sample:
    image: np.ndarray
    label: np.ndarray
    seed: int
    tree: VesselTree = None

    @property
    def label_fraction(self):
        return float(self.label.mean())


def normalize_angle(angle):
    """把角度规整到 (-pi, pi]"""
    angle = math.remainder(angle, 2 * math.pi)
    if angle <= -math.pi:
        angle += 2 * math.pi
    return angle


def in_circle(p, center, radius):
    return math.hypot(p[0] - center[0], p[1] - center[1]) <= radius


def gen_point(origin, angle, length):
    x = origin[0] + length * math.cos(angle)
    y = origin[1] + length * math.sin(angle)
    return int(math.floor(x + 0.5)), int(math.floor(y + 0.5))


def sample_branch_angle(stem_direction, alpha_m, sigma_alpha, rng):
    """
    两个候选均值 +alpha_m / -alpha_m 等概率选一个，
    再以它为均值抽正态分布，标准差 sigma_alpha。
    """
    sign = 1.0 if rng.random() < 0.5 else -1.0
    delta = rng.normal(sign * alpha_m, sigma_alpha)
    return normalize_angle(stem_direction + delta)


def draw_length(mean_length, sigma_length, rng):
    while True:
        length = rng.normal(mean_length, sigma_length)
        if length >= MIN_LENGTH:
            return float(length)


def bresenham(p0, p1):
    """整数 Bresenham 中心线，包含两个端点"""
    x0, y0 = p0
    x1, y1 = p1
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    points = []
    while True:
        points.append((x0, y0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return points


def rasterize_segment(image, label, p0, p1, gray, width):
    """
    沿中心线每个像素盖一个 width x width 的方块。
    超出图像的部分直接裁掉，后画的线段覆盖先画的。
    """
    points = np.asarray(bresenham(p0, p1), dtype=np.int64)
    offsets = np.arange(-((width - 1) // 2), width // 2 + 1)
    xs = (points[:, 0, None, None] + offsets[None, :, None]).repeat(len(offsets), axis=2)
    ys = (points[:, 1, None, None] + offsets[None, None, :]).repeat(len(offsets), axis=1)
    xs = xs.ravel()
    ys = ys.ravel()
    height, width_px = image.shape
    inside = (xs >= 0) & (xs < width_px) & (ys >= 0) & (ys < height)
    image[ys[inside], xs[inside]] = gray
    label[ys[inside], xs[inside]] = 1


def generate_raw(config, seed):
    """
    由 (config, seed) 唯一确定的原始样本。
    节点按广度优先顺序长分支，一个节点长满 max_children 个孩子才轮到下一个。
    """
    rng = get_rng(seed)
    size = config.image_size
    center = config.circle_center
    radius = config.circle_radius
    lo, hi = config.gray_range

    image = np.zeros((size, size), dtype=np.float64)
    label = np.zeros((size, size), dtype=np.uint8)

    root = (int(math.floor(center[0] + 0.5)), int(math.floor(center[1] + 0.5)))
    tree = VesselTree(nodes=[Node(root, normalize_angle(rng.uniform(-math.pi, math.pi)))])
    queue = deque([0])

    while tree.node_count < config.max_nodes and queue:
        idx = queue[0]
        node = tree.nodes[idx]
        if node.children >= config.max_children:
            queue.popleft()
            continue

        for _ in range(MAX_BRANCH_RETRIES + 1):
            length = draw_length(config.mean_length, config.sigma_length, rng)
            angle = sample_branch_angle(node.direction, config.branch_angle, config.sigma_angle, rng)
            point = gen_point(node.position, angle, length)
            if in_circle(point, center, radius):
                break
            logger.debug('seed %s: branch from node %d rejected at %s', seed, idx, point)
        else:
            queue.popleft()
            if idx == 0 and not tree.edges:
                raise GenerationError(
                    'mean_length',
                    'No branch from the root fits inside the circle after {} retries; '
                    'mean_length={} vs circle_radius={}'.format(
                        MAX_BRANCH_RETRIES, config.mean_length, radius)
                )
            logger.debug('seed %s: node %d exhausted with %d children', seed, idx, node.children)
            continue

        gray = float(rng.uniform(lo, hi))
        rasterize_segment(image, label, node.position, point, gray, config.line_width)
        logger.debug('seed %s: segment length %.4f', seed, length)

        tree.nodes.append(Node(point, angle))
        tree.edges.append(Edge(idx, point, gray, config.line_width, length))
        node.children += 1
        queue.append(len(tree.nodes) - 1)

    return Sample(image=image, label=label, seed=seed, tree=tree)
