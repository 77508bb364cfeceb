# src/common/errors.py
"""
结构化错误。

每个错误都带一个机器可读的 ``category``，命令行据此决定退出码，
调用方也可以只按 ``ActionVladError`` 统一捕获。
"""


class ActionVladError(Exception):
    """所有结构化错误的基类。"""

    category: str = "internal"

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return f"[{self.category}] {self.message}"


class ShapeMismatchError(ActionVladError, ValueError):
    category = "shape"


class NonFiniteInputError(ActionVladError, ValueError):
    category = "non_finite"


class InvalidParameterError(ActionVladError, ValueError):
    category = "invalid_parameter"


class EmptyInputError(ActionVladError, ValueError):
    category = "empty_input"


# --- 特征文件 ---


class FeatureFileError(ActionVladError):
    category = "feature_file"


class BadMagicError(FeatureFileError):
    category = "bad_magic"


class UnsupportedVersionError(FeatureFileError):
    category = "bad_version"


class SizeMismatchError(FeatureFileError):
    category = "size_mismatch"


class DimensionOverflowError(FeatureFileError):
    category = "dimension_overflow"


class FeatureIOError(FeatureFileError):
    category = "io"


# --- 清单 / 检查点 / 流程 ---


class ManifestError(ActionVladError):
    category = "manifest"

    def __init__(self, message: str, line_number: int | None = None) -> None:
        if line_number is not None:
            message = f"第 {line_number} 行: {message}"
        super().__init__(message)
        self.line_number = line_number


class CheckpointError(ActionVladError):
    category = "checkpoint"


class ChecksumMismatchError(CheckpointError):
    category = "checksum"


class CheckpointVersionError(CheckpointError):
    category = "checkpoint_version"


class StageOrderError(ActionVladError):
    category = "stage_order"


class ReportError(ActionVladError):
    category = "report"


class ScoreFileError(ActionVladError):
    category = "score_file"

    def __init__(self, message: str, line_number: int | None = None) -> None:
        if line_number is not None:
            message = f"第 {line_number} 行: {message}"
        super().__init__(message)
        self.line_number = line_number
