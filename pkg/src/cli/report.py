# src/cli/report.py
"""
实验报告：准确率、逐类准确率、混淆矩阵、多标签时的 mAP / wAP，以及耗时。

AP 用 sklearn 的 average_precision_score，也就是按所有召回点求精度的阶梯和，不做插值。
没有正样本的类别 AP 记为 NaN，不参与 mAP / wAP。
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from rich.console import Console
from rich.table import Table
from sklearn.metrics import average_precision_score
from sklearn.metrics import confusion_matrix as sk_confusion_matrix

from src.common.custom_logging.logging_config import get_logger
from src.common.errors import ReportError, ShapeMismatchError

logger = get_logger(__name__)

REPORT_FORMATS = ("text", "yaml")


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """单个类别的 AP；没有正样本时返回 NaN。"""
    positives = np.asarray(positives, dtype=bool)
    if not positives.any():
        return float("nan")
    return float(average_precision_score(positives.astype(int), np.asarray(scores, dtype=np.float64)))


def per_class_average_precision(scores: np.ndarray, label_sets: Sequence[Sequence[int]]) -> np.ndarray:
    """scores 形状 (M, C)，label_sets[m] 是第 m 个视频的标签集合。"""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.zeros(scores.shape, dtype=bool)
    for row, labels in enumerate(label_sets):
        positives[row, list(labels)] = True
    return np.array([average_precision(scores[:, c], positives[:, c]) for c in range(scores.shape[1])])


def mean_average_precision(per_class_ap: np.ndarray) -> float:
    valid = per_class_ap[~np.isnan(per_class_ap)]
    return float(valid.mean()) if valid.size else float("nan")


def weighted_average_precision(per_class_ap: np.ndarray, class_counts: np.ndarray) -> float:
    """每个类别的 AP 按它的正样本数加权。"""
    mask = ~np.isnan(per_class_ap) & (class_counts > 0)
    if not mask.any():
        return float("nan")
    return float(np.average(per_class_ap[mask], weights=class_counts[mask]))


def confusion_matrix(true_labels: Sequence[int], predictions: Sequence[int], num_classes: int) -> np.ndarray:
    """行是真实类别，列是预测类别。"""
    if len(true_labels) == 0:
        return np.zeros((num_classes, num_classes), dtype=np.int64)
    return sk_confusion_matrix(true_labels, predictions, labels=list(range(num_classes))).astype(np.int64)


def row_normalize(matrix: np.ndarray) -> np.ndarray:
    """每行除以行和，全零行保持为零。"""
    matrix = np.asarray(matrix, dtype=np.float64)
    sums = matrix.sum(axis=1, keepdims=True)
    return np.divide(matrix, sums, out=np.zeros_like(matrix), where=sums > 0)


def confusion_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """row_normalize(a) − row_normalize(b)。两边行和都非零的行，差的行和为 0。"""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"混淆矩阵形状不一致或不是方阵: {a.shape} vs {b.shape}")
    return row_normalize(a) - row_normalize(b)


def _float_or_none(value: float) -> float | None:
    return None if value is None or math.isnan(value) else float(value)


def _nan_if_none(value: float | None) -> float:
    return float("nan") if value is None else float(value)


@dataclass
class ExperimentReport:
    """
    一次评估的结果。多标签视频计入混淆矩阵时：预测命中任一标签就记在命中的那一行，
    否则记在第一个标签那一行，这样 trace / total 始终等于准确率。
    """

    split: str
    num_classes: int
    confusion: np.ndarray
    per_class_ap: np.ndarray | None = None
    class_counts: np.ndarray | None = None
    timings: dict[str, float] = field(default_factory=dict)
    settings: dict[str, Any] = field(default_factory=dict)

    @property
    def num_videos(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        total = self.num_videos
        return float(np.trace(self.confusion)) / total if total else float("nan")

    @property
    def per_class_accuracy(self) -> np.ndarray:
        counts = self.confusion.sum(axis=1).astype(np.float64)
        diag = np.diag(self.confusion).astype(np.float64)
        return np.divide(diag, counts, out=np.full_like(diag, np.nan), where=counts > 0)

    @property
    def mean_ap(self) -> float | None:
        return None if self.per_class_ap is None else mean_average_precision(self.per_class_ap)

    @property
    def weighted_ap(self) -> float | None:
        if self.per_class_ap is None or self.class_counts is None:
            return None
        return weighted_average_precision(self.per_class_ap, self.class_counts)

    @classmethod
    def from_predictions(
        cls,
        split: str,
        scores: np.ndarray,
        label_sets: Sequence[Sequence[int]],
        num_classes: int,
        multi_label: bool = False,
        timings: dict[str, float] | None = None,
        settings: dict[str, Any] | None = None,
    ) -> "ExperimentReport":
        scores = np.asarray(scores, dtype=np.float64).reshape(len(label_sets), num_classes)
        predictions = [int(p) for p in np.argmax(scores, axis=1)] if len(label_sets) else []
        rows = [pred if pred in labels else labels[0] for pred, labels in zip(predictions, label_sets, strict=True)]
        report = cls(
            split=split,
            num_classes=num_classes,
            confusion=confusion_matrix(rows, predictions, num_classes),
            timings=dict(timings or {}),
            settings=dict(settings or {}),
        )
        if multi_label:
            report.per_class_ap = per_class_average_precision(scores, label_sets)
            counts = np.zeros(num_classes, dtype=np.int64)
            for labels in label_sets:
                counts[list(labels)] += 1
            report.class_counts = counts
        return report

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "split": self.split,
            "num_classes": self.num_classes,
            "num_videos": self.num_videos,
            "accuracy": _float_or_none(self.accuracy),
            "per_class_accuracy": [_float_or_none(value) for value in self.per_class_accuracy],
            "confusion": self.confusion.tolist(),
            "timings": {name: float(seconds) for name, seconds in self.timings.items()},
            "settings": dict(self.settings),
        }
        if self.per_class_ap is not None:
            data["per_class_ap"] = [_float_or_none(value) for value in self.per_class_ap]
            data["class_counts"] = self.class_counts.tolist() if self.class_counts is not None else None
            data["mAP"] = _float_or_none(self.mean_ap)
            data["wAP"] = _float_or_none(self.weighted_ap)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentReport":
        try:
            confusion = np.array(data["confusion"], dtype=np.int64)
            num_classes = int(data["num_classes"])
            report = cls(
                split=str(data.get("split", "test")),
                num_classes=num_classes,
                confusion=confusion.reshape(num_classes, num_classes),
                timings=dict(data.get("timings") or {}),
                settings=dict(data.get("settings") or {}),
            )
            if data.get("per_class_ap") is not None:
                report.per_class_ap = np.array([_nan_if_none(v) for v in data["per_class_ap"]])
                if data.get("class_counts") is not None:
                    report.class_counts = np.array(data["class_counts"], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as e:
            raise ReportError(f"报告内容不完整或格式不对: {e}") from e
        return report

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)

    def to_text(self) -> str:
        """逐行文本：key<TAB>value...，confusion 每行一条。"""
        lines = [
            f"split\t{self.split}",
            f"videos\t{self.num_videos}",
            f"classes\t{self.num_classes}",
            f"accuracy\t{self.accuracy:.6f}",
        ]
        lines += [f"class_accuracy\t{c}\t{acc:.6f}" for c, acc in enumerate(self.per_class_accuracy)]
        if self.per_class_ap is not None:
            lines.append(f"mAP\t{self.mean_ap:.6f}")
            lines.append(f"wAP\t{self.weighted_ap:.6f}")
            lines += [f"class_ap\t{c}\t{ap:.6f}" for c, ap in enumerate(self.per_class_ap)]
        lines += [f"confusion\t{c}\t{','.join(str(int(n)) for n in row)}" for c, row in enumerate(self.confusion)]
        lines += [f"time\t{name}\t{seconds:.3f}" for name, seconds in self.timings.items()]
        lines += [f"setting\t{name}\t{value}" for name, value in self.settings.items()]
        return "\n".join(lines) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "yaml":
            return self.to_yaml()
        if fmt == "text":
            return self.to_text()
        raise ReportError(f"未知的报告格式 '{fmt}'，可选 {REPORT_FORMATS}")

    def print_table(self, console: Console | None = None) -> None:
        """在终端上画一张逐类结果表。"""
        console = console or Console(stderr=True)
        table = Table(title=f"{self.split} 划分：{self.num_videos} 个视频，准确率 {self.accuracy:.4f}")
        table.add_column("类别", justify="right")
        table.add_column("视频数", justify="right")
        table.add_column("准确率", justify="right")
        if self.per_class_ap is not None:
            table.add_column("AP", justify="right")
        counts = self.confusion.sum(axis=1)
        for c in range(self.num_classes):
            row = [str(c), str(int(counts[c])), f"{self.per_class_accuracy[c]:.4f}"]
            if self.per_class_ap is not None:
                row.append(f"{self.per_class_ap[c]:.4f}")
            table.add_row(*row)
        console.print(table)
        if self.per_class_ap is not None:
            console.print(f"mAP = {self.mean_ap:.4f}    wAP = {self.weighted_ap:.4f}")


def _parse_text_report(text: str) -> ExperimentReport:
    split, num_classes = "test", None
    rows: dict[int, list[int]] = {}
    for line in text.splitlines():
        parts = line.split("\t")
        if parts[0] == "split" and len(parts) == 2:
            split = parts[1]
        elif parts[0] == "classes" and len(parts) == 2:
            num_classes = int(parts[1])
        elif parts[0] == "confusion" and len(parts) == 3:
            rows[int(parts[1])] = [int(token) for token in parts[2].split(",")]
    if num_classes is None or sorted(rows) != list(range(num_classes)):
        raise ReportError("文本报告里缺少 classes 或完整的 confusion 行")
    return ExperimentReport(split=split, num_classes=num_classes, confusion=np.array([rows[c] for c in sorted(rows)]))


def load_report(path: Path) -> ExperimentReport:
    """yaml 和 text 两种格式都能读，confusion-diff 只需要混淆矩阵。"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ReportError(f"读取报告 '{path}' 失败: {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError:
        data = None
    if isinstance(data, dict) and "confusion" in data:
        return ExperimentReport.from_dict(data)
    try:
        return _parse_text_report(text)
    except ValueError as e:
        raise ReportError(f"报告 '{path}' 解析失败: {e}") from e


def write_report(path: Path, report: ExperimentReport, fmt: str = "text") -> None:
    path = Path(path)
    content = report.render(fmt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
    except OSError as e:
        raise ReportError(f"写报告 '{path}' 失败: {e}") from e
    logger.info(f"报告已写到 '{path}' ({fmt})")
