# src/aggregation/pooling.py
"""按池化方式把视频编码成定长表示，并支持用线程池批量编码。"""

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from src.codebook.codebook import Codebook
from src.common.custom_logging.logging_config import get_logger
from src.common.errors import EmptyInputError, InvalidParameterError

from .actionvlad_layer import actionvlad_encode
from .baseline_pooling import average_pool, max_pool
from .feature_map import FeatureMap

logger = get_logger(__name__)

POOLING_MODES = ("vlad", "avg", "max")


def check_pooling_mode(pooling: str) -> None:
    if pooling not in POOLING_MODES:
        raise InvalidParameterError(f"未知的池化方式 '{pooling}'，可选 {POOLING_MODES}")


def representation_dim(pooling: str, D: int, K: int) -> int:  # noqa: N803
    check_pooling_mode(pooling)
    return K * D if pooling == "vlad" else D


def pool_video(f: FeatureMap, pooling: str, cb: Codebook | None = None) -> np.ndarray:
    check_pooling_mode(pooling)
    if pooling == "vlad":
        if cb is None:
            raise InvalidParameterError("vlad 池化需要码本")
        return actionvlad_encode(f, cb).values
    if pooling == "avg":
        return average_pool(f)
    return max_pool(f)


def pool_videos(
    feature_maps: Sequence[FeatureMap],
    pooling: str,
    cb: Codebook | None = None,
    workers: int = 1,
) -> np.ndarray:
    """
    批量编码，返回 (视频数, 表示维度)，行顺序和输入一致。

    workers > 1 时用线程池并发编码（码本只读，numpy 计算期间会释放 GIL）。
    """
    check_pooling_mode(pooling)
    if workers < 1:
        raise InvalidParameterError(f"workers 必须 >= 1，收到 {workers}")
    if not feature_maps:
        raise EmptyInputError("没有可编码的视频")

    if workers == 1 or len(feature_maps) == 1:
        rows = [pool_video(f, pooling, cb) for f in feature_maps]
    else:
        logger.debug(f"用 {workers} 个线程编码 {len(feature_maps)} 个视频")
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(lambda f: pool_video(f, pooling, cb), feature_maps))
    return np.stack(rows)
