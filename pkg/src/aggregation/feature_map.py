# src/aggregation/feature_map.py
"""聚合层的三个数据类型：FeatureMap（输入）、RawVlad（D×K 累加矩阵）、VladDescriptor（最终向量）。"""

from dataclasses import dataclass

import numpy as np

from src.common.errors import ShapeMismatchError
from src.common.numerics import ensure_finite


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    一个视频的描述子张量，形状 (T, N, D)：T 帧，每帧 N 个空间位置，每个位置一个 D 维描述子。

    数据按行主序存放（t 最外层，i 中间，j 最内层），构造时复制一份并设为只读，
    保留传入的浮点精度（文件里读出来的是 float32，计算时再升到 float64）。
    T、N、D 允许为 0，表示空的描述子集合。
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        array = np.asarray(self.data)
        if array.ndim != 3:
            raise ShapeMismatchError(f"FeatureMap 需要 (T, N, D) 三维数组，收到 {array.ndim} 维")
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        array = np.array(array, order="C", copy=True)
        ensure_finite(array, "FeatureMap")
        array.setflags(write=False)
        object.__setattr__(self, "data", array)

    @property
    def T(self) -> int:  # noqa: N802
        return self.data.shape[0]

    @property
    def N(self) -> int:  # noqa: N802
        return self.data.shape[1]

    @property
    def D(self) -> int:  # noqa: N802
        return self.data.shape[2]

    @property
    def num_descriptors(self) -> int:
        return self.T * self.N

    def descriptors(self, dtype: type = np.float64) -> np.ndarray:
        """按 (t, i) 顺序摊平成 (T·N, D)。"""
        return self.data.reshape(self.T * self.N, self.D).astype(dtype, copy=False)

    def frame(self, t: int, dtype: type = np.float64) -> np.ndarray:
        return self.data[t].astype(dtype, copy=False)

    def __repr__(self) -> str:
        return f"FeatureMap(T={self.T}, N={self.N}, D={self.D}, dtype={self.data.dtype})"


@dataclass(frozen=True, eq=False)
class RawVlad:
    """累加矩阵 V，形状 (D, K)，第 k 列是第 k 个 action word 的残差和。"""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeMismatchError(f"RawVlad 需要 (D, K) 二维数组，收到 {matrix.ndim} 维")
        object.__setattr__(self, "matrix", matrix)

    @property
    def D(self) -> int:  # noqa: N802
        return self.matrix.shape[0]

    @property
    def K(self) -> int:  # noqa: N802
        return self.matrix.shape[1]

    def column(self, k: int) -> np.ndarray:
        return self.matrix[:, k]

    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.matrix, axis=0)


@dataclass(frozen=True, eq=False)
class VladDescriptor:
    """长度 K·D 的视频表示；第 k 列占 [k·D, (k+1)·D)。"""

    values: np.ndarray
    K: int
    D: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.shape[0] != self.K * self.D:
            raise ShapeMismatchError(f"VladDescriptor 长度应为 K·D={self.K * self.D}，收到 {values.shape[0]}")
        object.__setattr__(self, "values", values)

    def block(self, k: int) -> np.ndarray:
        return self.values[k * self.D : (k + 1) * self.D]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))
