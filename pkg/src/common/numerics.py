# src/common/numerics.py
"""几个各模块都要用的数值小工具：稳定 softmax、带零向量规则的 L2 归一化及其反向。"""

import numpy as np

from src.common.errors import NonFiniteInputError

EPS_NORM = 1e-12
"""范数低于这个值的向量 / 列按零处理：归一化结果为零，反向梯度也为零。"""


def ensure_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteInputError(f"{what} 里有 NaN 或 Inf")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """减去最大值再取指数，α=1000 这种量级也不会溢出。"""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def l2_normalize(vector: np.ndarray) -> tuple[np.ndarray, float]:
    """返回 (单位向量, 原范数)；范数 < EPS_NORM 时返回全零。"""
    vector = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(vector))
    if norm < EPS_NORM:
        return np.zeros_like(vector), norm
    return vector / norm, norm


def l2_normalize_backward(normalized: np.ndarray, norm: float, upstream: np.ndarray) -> np.ndarray:
    """y = z/‖z‖ 的反向：dz = (g − y(y·g)) / ‖z‖。退化情形梯度为零。"""
    if norm < EPS_NORM:
        return np.zeros_like(normalized)
    upstream = np.asarray(upstream, dtype=np.float64)
    return (upstream - normalized * float(np.dot(normalized, upstream))) / norm


# 距离计算时一次最多展开这么多个 (row, k, j) 元素
_DISTANCE_CHUNK_ELEMENTS = 1 << 20


def squared_distances(X: np.ndarray, anchors: np.ndarray) -> np.ndarray:  # noqa: N803
    """(M, D) 和 (K, D) 两两之间的平方距离，直接对差值求平方和，不走 ‖x‖²−2x·a+‖a‖² 展开。"""
    M, K = X.shape[0], anchors.shape[0]  # noqa: N806
    out = np.empty((M, K), dtype=np.float64)
    rows_per_chunk = max(1, _DISTANCE_CHUNK_ELEMENTS // max(1, K * X.shape[1]))
    for start in range(0, M, rows_per_chunk):
        diff = X[start : start + rows_per_chunk, None, :] - anchors[None, :, :]
        out[start : start + rows_per_chunk] = np.einsum("mkd,mkd->mk", diff, diff)
    return out
