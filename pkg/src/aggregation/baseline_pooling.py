# src/aggregation/baseline_pooling.py
"""平均池化和最大池化两个基线，结果都做 L2 归一化（和 VLAD 同样的零向量规则）。"""

import numpy as np

from src.common.errors import ShapeMismatchError
from src.common.numerics import l2_normalize, l2_normalize_backward

from .feature_map import FeatureMap


def average_pool_raw(f: FeatureMap) -> np.ndarray:
    """所有 T·N 个描述子的逐元素均值，没有描述子时返回零向量。"""
    X = f.descriptors()  # noqa: N806
    if X.shape[0] == 0:
        return np.zeros(f.D, dtype=np.float64)
    return X.mean(axis=0)


def max_pool_raw(f: FeatureMap) -> np.ndarray:
    X = f.descriptors()  # noqa: N806
    if X.shape[0] == 0:
        return np.zeros(f.D, dtype=np.float64)
    return X.max(axis=0)


def average_pool(f: FeatureMap) -> np.ndarray:
    return l2_normalize(average_pool_raw(f))[0]


def max_pool(f: FeatureMap) -> np.ndarray:
    return l2_normalize(max_pool_raw(f))[0]


def _check_upstream(f: FeatureMap, upstream: np.ndarray) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.shape[0] != f.D:
        raise ShapeMismatchError(f"上游梯度长度应为 D={f.D}，收到 {upstream.shape[0]}")
    return upstream


def average_pool_backward(f: FeatureMap, upstream: np.ndarray) -> np.ndarray:
    """每个描述子分到 (∂L/∂mean) / (T·N)，返回 (T, N, D)。"""
    upstream = _check_upstream(f, upstream)
    grad = np.zeros(f.data.shape, dtype=np.float64)
    if f.num_descriptors == 0:
        return grad
    normalized, norm = l2_normalize(average_pool_raw(f))
    grad_mean = l2_normalize_backward(normalized, norm, upstream)
    grad[...] = grad_mean / f.num_descriptors
    return grad


def max_pool_backward(f: FeatureMap, upstream: np.ndarray) -> np.ndarray:
    """梯度只流向每一维的最大值位置，并列时给第一个出现的。"""
    upstream = _check_upstream(f, upstream)
    grad = np.zeros((f.num_descriptors, f.D), dtype=np.float64)
    if f.num_descriptors == 0:
        return grad.reshape(f.data.shape)
    X = f.descriptors()  # noqa: N806
    normalized, norm = l2_normalize(X.max(axis=0))
    grad_max = l2_normalize_backward(normalized, norm, upstream)
    winners = np.argmax(X, axis=0)
    grad[winners, np.arange(f.D)] = grad_max
    return grad.reshape(f.data.shape)
