# src/data_io/models.py
"""数据集层面的模型：清单里的一行、加载到内存的一个带标签视频、按划分组织的数据集。"""

from dataclasses import dataclass, field
from pathlib import Path

from src.aggregation.feature_map import FeatureMap
from src.common.errors import InvalidParameterError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    """清单里的一行。paths[s][c] 是第 s 路第 c 个裁剪的特征文件。"""

    video_id: str
    labels: tuple[int, ...]
    split: str
    paths: tuple[tuple[Path, ...], ...]
    line_number: int = 0

    @property
    def label(self) -> int:
        return self.labels[0]

    @property
    def num_streams(self) -> int:
        return len(self.paths)


@dataclass(frozen=True, eq=False)
class LabeledVideo:
    """
    内存里的一个视频。streams[s][c] 是第 s 路（0 = a 路，1 = b 路）第 c 个裁剪的 FeatureMap，
    第 0 个裁剪是中心裁剪。多标签视频的 labels 有多个元素，单标签时就一个。
    """

    video_id: str
    labels: tuple[int, ...]
    streams: tuple[tuple[FeatureMap, ...], ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise InvalidParameterError(f"视频 '{self.video_id}' 没有标签")
        if not self.streams or any(not crops for crops in self.streams):
            raise InvalidParameterError(f"视频 '{self.video_id}' 没有特征")

    @property
    def label(self) -> int:
        return self.labels[0]

    @property
    def num_streams(self) -> int:
        return len(self.streams)

    def crops(self, stream: int = 0) -> tuple[FeatureMap, ...]:
        if not 0 <= stream < len(self.streams):
            raise InvalidParameterError(f"视频 '{self.video_id}' 只有 {len(self.streams)} 路特征，没有第 {stream} 路")
        return self.streams[stream]


@dataclass
class VideoDataset:
    """按 train / val / test 划分的视频列表。num_classes 由标签集合决定。"""

    num_classes: int
    splits: dict[str, list[LabeledVideo]] = field(default_factory=dict)

    def split(self, name: str) -> list[LabeledVideo]:
        if name not in SPLITS:
            raise InvalidParameterError(f"未知的数据划分 '{name}'，可选 {SPLITS}")
        return self.splits.get(name, [])

    @property
    def feature_dim(self) -> int:
        for videos in self.splits.values():
            if videos:
                return videos[0].crops(0)[0].D
        return 0

    @property
    def num_streams(self) -> int:
        for videos in self.splits.values():
            if videos:
                return videos[0].num_streams
        return 0
