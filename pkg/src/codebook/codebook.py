# src/codebook/codebook.py
"""码本：K 个残差锚点 c_k、K 个解耦的分配锚点 a_k，加上锐度 α。"""

from dataclasses import dataclass

import numpy as np

from src.common.errors import EmptyInputError, InvalidParameterError, ShapeMismatchError
from src.common.numerics import ensure_finite


def _as_anchor_matrix(anchors: np.ndarray, what: str) -> np.ndarray:
    matrix = np.array(anchors, dtype=np.float64, order="C", copy=True)
    if matrix.size == 0:
        raise EmptyInputError(f"{what} 不能为空，收到形状 {matrix.shape}")
    if matrix.ndim != 2:
        raise ShapeMismatchError(f"{what} 需要 (K, D) 二维数组，收到 {matrix.ndim} 维")
    ensure_finite(matrix, what)
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True, eq=False)
class Codebook:
    """
    残差用 residual_anchors，软分配用 assign_anchors。

    刚构造出来时两套锚点完全相同；第二阶段训练会分别更新它们（除非 tie_anchors）。
    对象本身不可变，训练时用 with_anchors() 换一个新的。
    """

    residual_anchors: np.ndarray
    assign_anchors: np.ndarray
    alpha: float

    def __post_init__(self) -> None:
        residual = _as_anchor_matrix(self.residual_anchors, "residual_anchors")
        assign = _as_anchor_matrix(self.assign_anchors, "assign_anchors")
        if residual.shape != assign.shape:
            raise ShapeMismatchError(f"两套锚点形状不一致: {residual.shape} vs {assign.shape}")
        alpha = float(self.alpha)
        if not np.isfinite(alpha) or alpha <= 0:
            raise InvalidParameterError(f"alpha 必须是正的有限数，收到 {self.alpha}")
        object.__setattr__(self, "residual_anchors", residual)
        object.__setattr__(self, "assign_anchors", assign)
        object.__setattr__(self, "alpha", alpha)

    @property
    def K(self) -> int:  # noqa: N802
        return self.residual_anchors.shape[0]

    @property
    def D(self) -> int:  # noqa: N802
        return self.residual_anchors.shape[1]

    @property
    def anchors_tied(self) -> bool:
        return bool(np.array_equal(self.residual_anchors, self.assign_anchors))

    def with_anchors(self, residual_anchors: np.ndarray, assign_anchors: np.ndarray) -> "Codebook":
        return Codebook(residual_anchors=residual_anchors, assign_anchors=assign_anchors, alpha=self.alpha)

    def __repr__(self) -> str:
        return f"Codebook(K={self.K}, D={self.D}, alpha={self.alpha}, tied={self.anchors_tied})"


def build_codebook(anchors: np.ndarray, alpha: float) -> Codebook:
    """两套锚点都取同一份 anchors（逐位相同）。"""
    matrix = _as_anchor_matrix(anchors, "anchors")
    return Codebook(residual_anchors=matrix, assign_anchors=matrix.copy(), alpha=alpha)
