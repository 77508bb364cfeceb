# src/training/classifier.py
"""视频表示上的单层线性 softmax 分类器，以及交叉熵和 dropout。"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from src.aggregation.feature_map import VladDescriptor
from src.common.errors import InvalidParameterError, ShapeMismatchError
from src.common.numerics import ensure_finite, log_softmax, softmax
from src.fusion.score_fusion import ScoreVector

# 权重初始化的标准差
INIT_WEIGHT_STD = 0.01


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    """logits = W·v + b，W 形状 (C, F)，F 是表示维度（VLAD 时为 K·D）。"""

    W: np.ndarray
    b: np.ndarray
    dropout_rate: float = 0.5

    def __post_init__(self) -> None:
        W = np.array(self.W, dtype=np.float64)  # noqa: N806
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if W.ndim != 2:
            raise ShapeMismatchError(f"W 需要 (C, F) 二维数组，收到 {W.ndim} 维")
        if b.shape[0] != W.shape[0]:
            raise ShapeMismatchError(f"b 的长度 {b.shape[0]} 和类别数 {W.shape[0]} 不一致")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidParameterError(f"dropout_rate 必须在 [0, 1) 内，收到 {self.dropout_rate}")
        ensure_finite(W, "分类器权重")
        ensure_finite(b, "分类器偏置")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "dropout_rate", float(self.dropout_rate))

    @property
    def C(self) -> int:  # noqa: N802
        return self.W.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W.shape[1]

    @classmethod
    def initialize(cls, num_classes: int, feature_dim: int, dropout_rate: float, seed: int) -> "ClassifierModel":
        if num_classes < 1 or feature_dim < 1:
            raise InvalidParameterError(f"类别数和表示维度都必须 >= 1，收到 {num_classes}, {feature_dim}")
        rng = np.random.default_rng(seed)
        W = rng.normal(0.0, INIT_WEIGHT_STD, size=(num_classes, feature_dim))  # noqa: N806
        return cls(W=W, b=np.zeros(num_classes), dropout_rate=dropout_rate)

    def with_params(self, W: np.ndarray, b: np.ndarray) -> "ClassifierModel":  # noqa: N803
        return ClassifierModel(W=W, b=b, dropout_rate=self.dropout_rate)


def _as_vector(v: VladDescriptor | np.ndarray) -> np.ndarray:
    if isinstance(v, VladDescriptor):
        return v.values
    return np.asarray(v, dtype=np.float64).reshape(-1)


def classifier_forward(v: VladDescriptor | np.ndarray, m: ClassifierModel) -> ScoreVector:
    values = _as_vector(v)
    if values.shape[0] != m.feature_dim:
        raise ShapeMismatchError(f"表示长度 {values.shape[0]} 和分类器输入维度 {m.feature_dim} 不一致")
    return ScoreVector(m.W @ values + m.b, kind="logit")


def classifier_forward_batch(V: np.ndarray, m: ClassifierModel) -> np.ndarray:  # noqa: N803
    """(B, F) → (B, C) 的 logits。"""
    V = np.asarray(V, dtype=np.float64)  # noqa: N806
    if V.ndim != 2 or V.shape[1] != m.feature_dim:
        raise ShapeMismatchError(f"批量表示形状 {V.shape} 和分类器输入维度 {m.feature_dim} 不匹配")
    return V @ m.W.T + m.b


def softmax_cross_entropy(logits: np.ndarray | ScoreVector, label: int) -> tuple[float, np.ndarray]:
    """loss = −log softmax(logits)[label]，grad = softmax(logits) − one_hot(label)。"""
    values = logits.values if isinstance(logits, ScoreVector) else np.asarray(logits, dtype=np.float64)
    if not 0 <= label < values.shape[0]:
        raise InvalidParameterError(f"标签 {label} 不在 [0, {values.shape[0]}) 内")
    loss = -float(log_softmax(values)[label])
    grad = softmax(values)
    grad[label] -= 1.0
    return loss, grad


def label_target(labels: Sequence[int], num_classes: int) -> np.ndarray:
    """把（可能多个）标签变成均匀分布的目标向量。"""
    if not labels:
        raise InvalidParameterError("至少需要一个标签")
    target = np.zeros(num_classes, dtype=np.float64)
    for label in labels:
        if not 0 <= label < num_classes:
            raise InvalidParameterError(f"标签 {label} 不在 [0, {num_classes}) 内")
        target[label] = 1.0
    return target / target.sum()


def softmax_cross_entropy_soft(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """对任意目标分布的交叉熵。logits 和 target 可以是 (C,) 或 (B, C)，批量时返回总损失。"""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise ShapeMismatchError(f"logits 形状 {logits.shape} 和目标形状 {target.shape} 不一致")
    loss = -float(np.sum(target * log_softmax(logits, axis=-1)))
    grad = softmax(logits, axis=-1) * target.sum(axis=-1, keepdims=True) - target
    return loss, grad


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """存活位置是 1/(1−rate)，丢弃位置是 0。"""
    if not 0.0 <= rate < 1.0:
        raise InvalidParameterError(f"dropout 比例必须在 [0, 1) 内，收到 {rate}")
    return (rng.random(shape) >= rate) / (1.0 - rate)


def apply_dropout(v: np.ndarray, rate: float, rng: np.random.Generator, training: bool) -> np.ndarray:
    """inverted dropout：训练时每个元素以 rate 的概率置零，存活的乘 1/(1−rate)；评估时原样返回。"""
    if not 0.0 <= rate < 1.0:
        raise InvalidParameterError(f"dropout 比例必须在 [0, 1) 内，收到 {rate}")
    v = np.asarray(v, dtype=np.float64)
    if not training or rate == 0.0:
        return v
    return v * dropout_mask(v.shape, rate, rng)
