# src/fusion/score_fusion.py
"""
分数层面的融合：两路模型的后融合、和外部分数（例如手工特征 SVM 的输出）的加权平均，
以及外部分数文件的读写。文件每行一个视频："video_id<TAB>s_1,...,s_C"。
"""

import math
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.common.custom_logging.logging_config import get_logger
from src.common.errors import InvalidParameterError, ScoreFileError, ShapeMismatchError
from src.common.numerics import ensure_finite, softmax

logger = get_logger(__name__)

SCORE_KINDS = ("probability", "logit", "score")
_PROBABILITY_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """C 个类别的分数，kind 标明是 softmax 之后的概率、原始 logit，还是其他来源的分数。"""

    values: np.ndarray
    kind: str = "score"

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if self.kind not in SCORE_KINDS:
            raise InvalidParameterError(f"未知的分数类型 '{self.kind}'，可选 {SCORE_KINDS}")
        if values.shape[0] == 0:
            raise ShapeMismatchError("分数向量不能为空")
        ensure_finite(values, "分数向量")
        if self.kind == "probability":
            if np.any(values < -_PROBABILITY_TOLERANCE) or np.any(values > 1 + _PROBABILITY_TOLERANCE):
                raise InvalidParameterError("概率分数必须在 [0, 1] 内")
            if abs(float(values.sum()) - 1.0) > _PROBABILITY_TOLERANCE:
                raise InvalidParameterError(f"概率分数之和应为 1，实际 {values.sum()}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def C(self) -> int:  # noqa: N802
        return self.values.shape[0]

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.values))

    @classmethod
    def from_logits(cls, logits: np.ndarray, space: str = "probability") -> "ScoreVector":
        """分类器输出的 logit，按 space 转成概率或者原样保留。"""
        if space == "probability":
            return cls(softmax(logits), kind="probability")
        if space == "logit":
            return cls(logits, kind="logit")
        raise InvalidParameterError(f"未知的后融合空间 '{space}'，可选 probability / logit")


def _check_weight(w: float) -> float:
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise InvalidParameterError(f"融合权重必须在 [0, 1] 内，收到 {w}")
    return w


def late_fuse(sa: ScoreVector, sb: ScoreVector, w: float = 0.5) -> ScoreVector:
    """w·sa + (1−w)·sb。两边类型相同则保留类型，否则记为 score。"""
    w = _check_weight(w)
    if sa.C != sb.C:
        raise ShapeMismatchError(f"后融合的类别数不一致: {sa.C} vs {sb.C}")
    kind = sa.kind if sa.kind == sb.kind else "score"
    fused = w * sa.values + (1.0 - w) * sb.values
    return ScoreVector(fused, kind=kind)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """线性拉到 [0, 1]；所有值相等时返回全零。"""
    values = np.asarray(values, dtype=np.float64)
    low, high = float(values.min()), float(values.max())
    if high - low <= 0.0:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def score_fuse_external(model: ScoreVector, external: ScoreVector, w: float = 0.5) -> ScoreVector:
    """两边先按视频各自 min-max 到 [0, 1]（外部分数可能是 SVM 间隔，量纲不同），再加权平均。"""
    w = _check_weight(w)
    if model.C != external.C:
        raise ShapeMismatchError(f"外部分数的类别数 {external.C} 和模型的 {model.C} 不一致")
    fused = w * minmax_normalize(model.values) + (1.0 - w) * minmax_normalize(external.values)
    return ScoreVector(fused, kind="score")


def fuse_score_tables(
    model_scores: Mapping[str, ScoreVector],
    external_scores: Mapping[str, ScoreVector],
    w: float = 0.5,
) -> dict[str, ScoreVector]:
    """逐视频调用 score_fuse_external，顺序跟 model_scores 一致；外部分数缺视频就报错。"""
    missing = [video_id for video_id in model_scores if video_id not in external_scores]
    if missing:
        preview = ", ".join(missing[:5])
        raise ScoreFileError(f"外部分数里缺少 {len(missing)} 个视频: {preview}")
    return {
        video_id: score_fuse_external(scores, external_scores[video_id], w) for video_id, scores in model_scores.items()
    }


def read_score_file(path: Path, kind: str = "score") -> dict[str, ScoreVector]:
    """读分数文件，保持文件里的视频顺序。空行跳过，# 开头的行是注释。"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ScoreFileError(f"读取分数文件 '{path}' 失败: {e}") from e

    scores: dict[str, ScoreVector] = {}
    num_classes: int | None = None
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise ScoreFileError("格式应为 'video_id<TAB>s_1,...,s_C'", line_number)
        video_id, raw_values = parts
        if video_id in scores:
            raise ScoreFileError(f"视频 '{video_id}' 重复出现", line_number)
        try:
            values = [float(token) for token in raw_values.split(",")]
        except ValueError as e:
            raise ScoreFileError(f"分数不是合法的数字: {e}", line_number) from e
        if not all(math.isfinite(value) for value in values):
            raise ScoreFileError("分数里有 NaN 或 Inf", line_number)
        if num_classes is None:
            num_classes = len(values)
        elif len(values) != num_classes:
            raise ScoreFileError(f"类别数 {len(values)} 和前面的 {num_classes} 不一致", line_number)
        try:
            scores[video_id] = ScoreVector(np.array(values), kind=kind)
        except InvalidParameterError as e:
            raise ScoreFileError(e.message, line_number) from e

    logger.debug(f"从 '{path}' 读到 {len(scores)} 个视频的分数")
    return scores


def write_score_file(path: Path, scores: Mapping[str, ScoreVector]) -> None:
    """分数用 repr 写出，读回来逐位相同。"""
    path = Path(path)
    lines = []
    for video_id, vector in scores.items():
        if "\t" in video_id or "\n" in video_id:
            raise ScoreFileError(f"视频名 '{video_id!r}' 里不能有制表符或换行")
        lines.append(f"{video_id}\t{','.join(repr(float(value)) for value in vector.values)}\n")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(lines), encoding="utf-8")
    except OSError as e:
        raise ScoreFileError(f"写分数文件 '{path}' 失败: {e}") from e
    logger.debug(f"已写出 {len(lines)} 个视频的分数到 '{path}'")
