# src/data_io/manifest.py
"""
数据集清单。每行一个视频，字段用制表符分隔：

    path<TAB>label<TAB>split[<TAB>path_b]

- path / path_b：a 路 / b 路的 AVF1 文件，相对路径相对清单所在目录；
  一个字段里可以用 ";" 列出多个裁剪，第一个是中心裁剪。
- label：类别编号，多标签时用逗号分隔，例如 "3,7"。所有标签必须恰好是 0..C-1。
- split：train / val / test。
空行和 # 开头的行忽略。
"""

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from src.common.custom_logging.logging_config import get_logger
from src.common.errors import ActionVladError, InvalidParameterError, ManifestError

from .feature_file import read_feature_file
from .models import SPLITS, LabeledVideo, ManifestEntry, VideoDataset

logger = get_logger(__name__)

CROP_SEPARATOR = ";"
LABEL_SEPARATOR = ","


def _parse_labels(field: str, line_number: int) -> tuple[int, ...]:
    try:
        labels = tuple(int(token) for token in field.split(LABEL_SEPARATOR))
    except ValueError as e:
        raise ManifestError(f"标签 '{field}' 不是整数", line_number) from e
    if any(label < 0 for label in labels):
        raise ManifestError(f"标签 '{field}' 不能为负", line_number)
    if len(set(labels)) != len(labels):
        raise ManifestError(f"标签 '{field}' 有重复", line_number)
    return labels


def _parse_paths(field: str, base_dir: Path, line_number: int) -> tuple[Path, ...]:
    tokens = [token.strip() for token in field.split(CROP_SEPARATOR)]
    if not tokens or any(not token for token in tokens):
        raise ManifestError(f"路径字段 '{field}' 里有空路径", line_number)
    paths = []
    for token in tokens:
        path = Path(token)
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ManifestError(f"特征文件 '{path}' 不存在", line_number)
        paths.append(path)
    return tuple(paths)


def _video_id(field: str) -> str:
    first = field.split(CROP_SEPARATOR)[0].strip()
    return str(Path(first).with_suffix("")).replace("\\", "/")


def parse_manifest_line(line: str, base_dir: Path, line_number: int) -> ManifestEntry:
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) not in (3, 4):
        raise ManifestError(f"应有 3 或 4 个制表符分隔的字段，实际 {len(fields)} 个", line_number)
    split = fields[2].strip()
    if split not in SPLITS:
        raise ManifestError(f"划分 '{split}' 不是 {SPLITS} 之一", line_number)
    labels = _parse_labels(fields[1].strip(), line_number)
    streams = [_parse_paths(fields[0], base_dir, line_number)]
    if len(fields) == 4:
        streams.append(_parse_paths(fields[3], base_dir, line_number))
    return ManifestEntry(
        video_id=_video_id(fields[0]),
        labels=labels,
        split=split,
        paths=tuple(streams),
        line_number=line_number,
    )


@dataclass
class Manifest:
    """load_manifest 的结果：解析好的清单行。特征文件在 load_split 时才读。"""

    path: Path
    entries: list[ManifestEntry]
    num_classes: int

    @property
    def num_streams(self) -> int:
        return self.entries[0].num_streams

    @property
    def is_multi_label(self) -> bool:
        return any(len(entry.labels) > 1 for entry in self.entries)

    def entries_for(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise InvalidParameterError(f"未知的数据划分 '{split}'，可选 {SPLITS}")
        return [entry for entry in self.entries if entry.split == split]

    def load_entry(self, entry: ManifestEntry) -> LabeledVideo:
        """读出一行对应的全部特征。两路时逐个裁剪检查 T 是否一致。"""
        try:
            streams = tuple(tuple(read_feature_file(path) for path in crops) for crops in entry.paths)
        except ActionVladError as e:
            raise ManifestError(f"读取 '{entry.video_id}' 的特征失败: {e}", entry.line_number) from e
        if len(streams) == 2:
            for crop_a, crop_b in zip(streams[0], streams[1], strict=False):
                if crop_a.T != crop_b.T:
                    raise ManifestError(
                        f"'{entry.video_id}' 两路的帧数不一致: {crop_a.T} vs {crop_b.T}", entry.line_number
                    )
        return LabeledVideo(video_id=entry.video_id, labels=entry.labels, streams=streams)

    def load_split(self, split: str) -> list[LabeledVideo]:
        videos = [self.load_entry(entry) for entry in self.entries_for(split)]
        logger.debug(f"清单 '{self.path.name}' 的 {split} 划分读入了 {len(videos)} 个视频")
        return videos

    def load(self, splits: Sequence[str] = SPLITS) -> VideoDataset:
        return VideoDataset(num_classes=self.num_classes, splits={split: self.load_split(split) for split in splits})


def load_manifest(path: Path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ManifestError(f"读取清单 '{path}' 失败: {e}") from e

    base_dir = path.parent
    entries: list[ManifestEntry] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        entry = parse_manifest_line(line, base_dir, line_number)
        if entries and entry.num_streams != entries[0].num_streams:
            raise ManifestError(
                f"这一行有 {entry.num_streams} 路特征，前面的行是 {entries[0].num_streams} 路", line_number
            )
        entries.append(entry)

    if not entries:
        raise ManifestError(f"清单 '{path}' 里没有任何视频")
    label_set = {label for entry in entries for label in entry.labels}
    num_classes = max(label_set) + 1
    if len(label_set) != num_classes:
        missing = sorted(set(range(num_classes)) - label_set)
        raise ManifestError(f"标签不连续：0..{num_classes - 1} 中缺少 {missing}")

    logger.info(f"清单 '{path}' 载入: {len(entries)} 个视频, {num_classes} 类, {entries[0].num_streams} 路")
    return Manifest(path=path, entries=entries, num_classes=num_classes)


def format_manifest_line(paths: Sequence[Sequence[str]], labels: Sequence[int], split: str) -> str:
    """paths[s] 是第 s 路的各裁剪路径（已经是相对清单目录的字符串）。"""
    fields = [CROP_SEPARATOR.join(paths[0]), LABEL_SEPARATOR.join(str(label) for label in labels), split]
    if len(paths) > 1:
        fields.append(CROP_SEPARATOR.join(paths[1]))
    return "\t".join(fields)
