"""
随机数工具。每个样本一个独立的随机流，由 (base_seed, index) 派生，
所以并行生成时结果和调度顺序无关。
"""
import numpy as np


def derive_seed(base_seed, index):
    """seed_i = hash(base_seed, i)，返回 64 位无符号整数"""
    state = np.random.SeedSequence([int(base_seed), int(index)]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])


def get_rng(seed, stream=0):
    """
    同一个 seed 可以派生多条互不相关的流：
    stream 0 给生成器用，stream 1 给噪声用。
    """
    if stream == 0:
        return np.random.default_rng(int(seed))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


def rng_state(rng):
    return rng.bit_generator.state


def restore_rng(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
