"""各测试文件共用的构造函数和参考实现。"""

import numpy as np

from src.aggregation.feature_map import FeatureMap
from src.codebook.codebook import Codebook


def random_feature_map(rng: np.random.Generator, T: int, N: int, D: int) -> FeatureMap:  # noqa: N803
    return FeatureMap(rng.normal(size=(T, N, D)))


def random_codebook(
    rng: np.random.Generator,
    K: int,  # noqa: N803
    D: int,  # noqa: N803
    alpha: float = 1.0,
    tied: bool = False,
) -> Codebook:
    residual = rng.normal(size=(K, D))
    assign = residual.copy() if tied else rng.normal(size=(K, D))
    return Codebook(residual_anchors=residual, assign_anchors=assign, alpha=alpha)


def reference_vlad(f: FeatureMap, cb: Codebook) -> np.ndarray:
    """逐个 (j, k, t, i) 直接按定义累加的 V，形状 (D, K)。"""
    X = f.data.astype(np.float64)  # noqa: N806
    V = np.zeros((f.D, cb.K))  # noqa: N806
    for t in range(f.T):
        for i in range(f.N):
            x = X[t, i]
            logits = np.array([-cb.alpha * np.sum((x - cb.assign_anchors[k]) ** 2) for k in range(cb.K)])
            logits -= logits.max()
            weights = np.exp(logits) / np.exp(logits).sum()
            for k in range(cb.K):
                for j in range(f.D):
                    V[j, k] += weights[k] * (x[j] - cb.residual_anchors[k, j])
    return V


def central_difference(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:  # noqa: ANN001
    """对标量函数 fn 在 x 处逐元素做中心差分。"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + step
        plus = fn(x)
        x[index] = original - step
        minus = fn(x)
        x[index] = original
        grad[index] = (plus - minus) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8))
