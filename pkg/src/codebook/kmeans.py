# src/codebook/kmeans.py
"""
码本的 k-means 初始化。

k-means++ 选初始中心（sklearn 的 kmeans_plusplus，固定种子），然后自己跑 Lloyd 迭代：
分配不再变化就停，空簇挪到离（本轮更新后的）所属中心最远的点上，每轮检查簇内平方和不增。
"""

from collections.abc import Iterable
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from sklearn.cluster import kmeans_plusplus

from src.common.custom_logging.logging_config import get_logger
from src.common.errors import EmptyInputError, InvalidParameterError, ShapeMismatchError
from src.common.numerics import ensure_finite, squared_distances

from .codebook import Codebook, build_codebook

if TYPE_CHECKING:
    from src.aggregation.feature_map import FeatureMap

logger = get_logger(__name__)

# 簇内平方和允许的浮点回升量（相对值）
_SSE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class KMeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    """最后一次分配下的簇内平方和。"""
    iterations: int
    converged: bool
    inertia_history: tuple[float, ...]


def _validate_samples(samples: np.ndarray, k: int) -> np.ndarray:
    X = np.asarray(samples, dtype=np.float64)  # noqa: N806
    if k < 1:
        raise InvalidParameterError(f"K 必须 >= 1，收到 {k}")
    if X.ndim != 2:
        raise ShapeMismatchError(f"样本需要 (M, D) 二维数组，收到 {X.ndim} 维")
    if X.shape[1] < 1:
        raise EmptyInputError("样本维度 D 不能为 0")
    if X.shape[0] < k:
        raise InvalidParameterError(f"样本数 {X.shape[0]} 少于 K={k}，没法聚出这么多簇")
    ensure_finite(X, "k-means 样本")
    return X


def _reseed_empty_clusters(
    X: np.ndarray,  # noqa: N803
    centers: np.ndarray,
    assignments: np.ndarray,
    empty: np.ndarray,
) -> None:
    """原地改 centers：空簇依次放到离更新后的所属中心最远的点上，同一个点只用一次。"""
    cost = np.sum((X - centers[assignments]) ** 2, axis=1)
    for cluster in empty:
        farthest = int(np.argmax(cost))
        centers[cluster] = X[farthest]
        cost[farthest] = -1.0


def run_kmeans(samples: np.ndarray, k: int, max_iters: int = 100, seed: int = 0) -> KMeansResult:
    """给定 (样本, K, 种子) 结果逐位确定。"""
    X = _validate_samples(samples, k)  # noqa: N806
    if max_iters < 1:
        raise InvalidParameterError(f"max_iters 必须 >= 1，收到 {max_iters}")

    centers, _ = kmeans_plusplus(X, n_clusters=k, random_state=seed)
    centers = np.array(centers, dtype=np.float64)
    rows = np.arange(X.shape[0])

    assignments: np.ndarray | None = None
    history: list[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iters + 1):
        d2 = squared_distances(X, centers)
        new_assignments = np.argmin(d2, axis=1)
        point_cost = d2[rows, new_assignments]
        sse = float(point_cost.sum())
        if history:
            assert sse <= history[-1] * (1 + _SSE_TOLERANCE) + _SSE_TOLERANCE, (
                f"Lloyd 第 {iteration} 轮簇内平方和上升了: {history[-1]} -> {sse}"
            )
        history.append(sse)

        if assignments is not None and np.array_equal(new_assignments, assignments):
            converged = True
            break
        assignments = new_assignments

        counts = np.bincount(assignments, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assignments, X)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]

        empty = np.flatnonzero(~nonempty)
        if empty.size:
            logger.debug(f"第 {iteration} 轮有 {empty.size} 个空簇，挪到最远的点上")
            _reseed_empty_clusters(X, centers, assignments, empty)

    assert assignments is not None
    return KMeansResult(
        centers=centers,
        assignments=assignments,
        inertia=history[-1],
        iterations=iteration,
        converged=converged,
        inertia_history=tuple(history),
    )


def kmeans_init(
    samples: np.ndarray,
    k: int,
    max_iters: int = 100,
    seed: int = 0,
    alpha: float = 1000.0,
) -> Codebook:
    """用 k-means 的最终中心构造码本，两套锚点相同。"""
    result = run_kmeans(samples, k, max_iters=max_iters, seed=seed)
    status = "收敛" if result.converged else "达到迭代上限"
    logger.info(
        f"k-means 完成: {len(samples)} 个样本, K={k}, {result.iterations} 轮{status}, 簇内平方和 {result.inertia:.4f}"
    )
    return build_codebook(result.centers, alpha)


def sample_descriptors(feature_maps: Iterable["FeatureMap"], max_samples: int, seed: int = 0) -> np.ndarray:
    """
    把所有视频的描述子摞起来，超过 max_samples 就不放回地均匀抽样（抽到的保持原顺序）。
    """
    if max_samples < 1:
        raise InvalidParameterError(f"max_samples 必须 >= 1，收到 {max_samples}")
    blocks = [f.descriptors() for f in feature_maps if f.num_descriptors]
    if not blocks:
        raise EmptyInputError("训练集里一个描述子都没有")
    dims = {block.shape[1] for block in blocks}
    if len(dims) != 1:
        raise ShapeMismatchError(f"视频的描述子维度不一致: {sorted(dims)}")
    stacked = np.concatenate(blocks, axis=0)
    if stacked.shape[0] <= max_samples:
        return stacked
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(stacked.shape[0], size=max_samples, replace=False))
    logger.debug(f"从 {stacked.shape[0]} 个描述子里抽了 {max_samples} 个")
    return stacked[chosen]
