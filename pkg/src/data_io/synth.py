# src/data_io/synth.py
"""
合成子动作数据集。

每个类别由共享词表里的若干子动作组成，每帧挑一个子动作，描述子 = 原型 + 高斯噪声。三种布局：

- styled（默认）：每 8 个子动作是一个"立方体" o + {0,u}+{0,v}+{0,w}（u、v、w 非负且支撑两两不相交）。
  每个类别取其中两对对顶点，同一立方体里的类别多重集互不相同但两两有交集，
  均值都是 o + (u+v+w)/2，逐维最大值也相同。在此之上再给每个类别加外观偏移：
  只放在"比类别内最大原型低很多"的维度上、按出现次数加权求和为零，
  所以平均池化和逐维最大池化都分不开同一立方体里的类别，而按子动作分别累加残差能分开。
- multiset：用平行四边形原型 a=o+u, b=o+v, c=o+u+v, d=o 构造均值相同、逐维最大值也相同、
  但多重集不同的类别，不加外观偏移。
- disjoint：类别之间不共享子动作，作为对照。

帧数是类别多重集大小的整数倍时，各子动作的帧数严格按多重集比例分配。
同一个种子生成的数据逐字节相同。
"""

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomlkit

from src.aggregation.feature_map import FeatureMap
from src.common.custom_logging.logging_config import get_logger
from src.common.errors import FeatureIOError
from src.config.avlad_configs import SynthConfig

from .feature_file import write_feature_file
from .manifest import format_manifest_line
from .models import SPLITS, LabeledVideo, VideoDataset

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.tsv"
METADATA_NAME = "synth.toml"

# multiset 布局里每个平行四边形能造出的类别（按 a, b, c, d 的下标），均值都是 o + (u+v)/2。
# 整个平行四边形排在最前面，这样同一个平行四边形里的类别都和它有交集
_PARALLELOGRAM_PATTERNS: tuple[tuple[int, ...], ...] = (
    (0, 1, 2, 3),
    (0, 1),
    (2, 3),
    (0, 0, 1, 1, 2, 3),
    (0, 1, 2, 2, 3, 3),
)

# 立方体顶点下标的第 0/1/2 位分别表示是否加 u/v/w，对顶点 (i, 7-i) 的中点都是立方体中心
_ANTIPODAL_PAIRS: tuple[tuple[int, int], ...] = ((0, 7), (1, 6), (2, 5), (3, 4))
_CUBE_PATTERNS: tuple[tuple[int, ...], ...] = tuple(
    tuple(sorted(first + second)) for first, second in itertools.combinations(_ANTIPODAL_PAIRS, 2)
)
_CUBE_SIZE = 8


@dataclass
class SynthDataset:
    config: SynthConfig
    prototypes: tuple[np.ndarray, ...]
    """每一路一个 (S, D) 的原型矩阵。"""
    class_multisets: tuple[tuple[int, ...], ...]
    """每个类别的子动作多重集（子动作下标，可重复）。"""
    style_offsets: tuple[np.ndarray, ...]
    """每一路一个 (C, S, D) 的类别外观偏移，styled 以外的布局全为零。"""
    data: VideoDataset


def _cube_prototypes(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    scale = cfg.prototype_scale
    prototypes = rng.normal(0.0, scale, size=(cfg.num_sub_actions, cfg.dim))
    for cube in range(cfg.num_sub_actions // _CUBE_SIZE):
        origin = rng.normal(0.0, scale, size=cfg.dim)
        edges = np.zeros((3, cfg.dim))
        for edge, support in zip(edges, np.array_split(rng.permutation(cfg.dim), 3), strict=True):
            edge[support] = np.abs(rng.normal(0.0, scale, size=support.size)) + 0.5 * scale
        for vertex in range(_CUBE_SIZE):
            bits = np.array([(vertex >> b) & 1 for b in range(3)], dtype=np.float64)
            prototypes[_CUBE_SIZE * cube + vertex] = origin + bits @ edges
    return prototypes


def _styled_layout(cfg: SynthConfig) -> list[tuple[int, ...]]:
    num_cubes = cfg.num_sub_actions // _CUBE_SIZE
    if cfg.num_classes > num_cubes * len(_CUBE_PATTERNS):
        logger.warning("styled 布局的类别数超过了能构造的不同多重集数，会有多重集完全相同的类别")
    if cfg.num_classes <= num_cubes:
        logger.warning(f"styled 布局有 {num_cubes} 个立方体、{cfg.num_classes} 个类别，没有任何两个类别共享子动作")
    multisets = []
    for c in range(cfg.num_classes):
        cube = c % num_cubes
        pattern = _CUBE_PATTERNS[(c // num_cubes) % len(_CUBE_PATTERNS)]
        multisets.append(tuple(_CUBE_SIZE * cube + i for i in pattern))
    return multisets


def _style_offsets(
    cfg: SynthConfig, prototypes: np.ndarray, multisets: list[tuple[int, ...]], rng: np.random.Generator
) -> np.ndarray:
    """
    对每个类别、每一维：类别里取值最大的原型不动，比它低至少 style_margin 的原型里交替放 ±style_magnitude，
    再减去按出现次数加权的均值，保证类别均值不变。每个类别每一维独立随机翻转符号。
    """
    offsets = np.zeros((cfg.num_classes, cfg.num_sub_actions, cfg.dim), dtype=np.float64)
    for c, multiset in enumerate(multisets):
        members, counts = np.unique(np.asarray(multiset), return_counts=True)
        block = prototypes[members]
        for j in range(cfg.dim):
            column = block[:, j]
            top = column.max()
            eligible = np.flatnonzero((column < top) & (top - column >= cfg.style_margin))
            if eligible.size < 2:
                continue
            pattern = np.where(np.arange(eligible.size) % 2 == 0, 1.0, -1.0)
            weights = counts[eligible].astype(np.float64)
            pattern -= np.dot(pattern, weights) / weights.sum()
            sign = 1.0 if rng.random() < 0.5 else -1.0
            offsets[c, members[eligible], j] = sign * cfg.style_magnitude * pattern
    return offsets


def _parallelogram_prototypes(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    scale = cfg.prototype_scale
    prototypes = rng.normal(0.0, scale, size=(cfg.num_sub_actions, cfg.dim))
    for quad in range(cfg.num_sub_actions // 4):
        origin = rng.normal(0.0, scale, size=cfg.dim)
        dims = rng.permutation(cfg.dim)
        u = np.zeros(cfg.dim)
        v = np.zeros(cfg.dim)
        half = cfg.dim // 2
        u[dims[:half]] = np.abs(rng.normal(0.0, scale, size=half)) + 0.5 * scale
        v[dims[half:]] = np.abs(rng.normal(0.0, scale, size=cfg.dim - half)) + 0.5 * scale
        prototypes[4 * quad : 4 * quad + 4] = [origin + u, origin + v, origin + u + v, origin]
    return prototypes


def _multiset_layout(cfg: SynthConfig) -> list[tuple[int, ...]]:
    num_quads = cfg.num_sub_actions // 4
    if cfg.num_classes > num_quads * len(_PARALLELOGRAM_PATTERNS):
        logger.warning("multiset 布局的类别数超过了能构造的不同多重集数，会有完全相同的类别")
    multisets = []
    for c in range(cfg.num_classes):
        quad = c % num_quads
        pattern = _PARALLELOGRAM_PATTERNS[(c // num_quads) % len(_PARALLELOGRAM_PATTERNS)]
        multisets.append(tuple(4 * quad + i for i in pattern))
    return multisets


def _build_stream(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, list[tuple[int, ...]], np.ndarray]:
    if cfg.layout == "styled":
        prototypes = _cube_prototypes(cfg, rng)
        multisets = _styled_layout(cfg)
        offsets = _style_offsets(cfg, prototypes, multisets, rng)
    elif cfg.layout == "multiset":
        prototypes = _parallelogram_prototypes(cfg, rng)
        multisets = _multiset_layout(cfg)
        offsets = np.zeros((cfg.num_classes, cfg.num_sub_actions, cfg.dim))
    else:
        prototypes = rng.normal(0.0, cfg.prototype_scale, size=(cfg.num_sub_actions, cfg.dim))
        m = cfg.sub_actions_per_class
        multisets = [tuple(range(c * m, (c + 1) * m)) for c in range(cfg.num_classes)]
        offsets = np.zeros((cfg.num_classes, cfg.num_sub_actions, cfg.dim))
    return prototypes, multisets, offsets


def _frame_sequence(multiset: tuple[int, ...], frames: int, rng: np.random.Generator) -> np.ndarray:
    """从随机起点循环铺满多重集（各子动作帧数最多差 1），再打乱帧顺序。"""
    start = int(rng.integers(len(multiset)))
    sequence = np.array([multiset[(start + t) % len(multiset)] for t in range(frames)])
    return rng.permutation(sequence)


def _render(
    cfg: SynthConfig, centers: np.ndarray, sequence: np.ndarray, rng: np.random.Generator
) -> FeatureMap:
    """centers 是这个类别的 (S, D) 原型（已加外观偏移）。"""
    base = centers[sequence][:, None, :]
    noise = rng.normal(0.0, 1.0, size=(cfg.frames, cfg.locations, cfg.dim))
    return FeatureMap((base + cfg.noise_sigma * noise).astype(np.float32))


def synth_generate(cfg: SynthConfig) -> SynthDataset:
    """按 SynthConfig 生成 train / val / test 三个划分。"""
    rng = np.random.default_rng(cfg.seed)

    stream_parts = [_build_stream(cfg, rng) for _ in range(cfg.streams)]
    multisets = stream_parts[0][1]
    class_centers = [prototypes[None, :, :] + offsets for prototypes, _, offsets in stream_parts]

    counts = {"train": cfg.train_per_class, "val": cfg.val_per_class, "test": cfg.test_per_class}
    splits: dict[str, list[LabeledVideo]] = {}
    for split in SPLITS:
        videos = []
        for c in range(cfg.num_classes):
            for index in range(counts[split]):
                sequence = _frame_sequence(multisets[c], cfg.frames, rng)
                streams = tuple(
                    tuple(_render(cfg, centers[c], sequence, rng) for _ in range(cfg.crops))
                    for centers in class_centers
                )
                videos.append(LabeledVideo(video_id=f"{split}/c{c:02d}_v{index:03d}", labels=(c,), streams=streams))
        splits[split] = videos

    logger.info(
        f"合成数据生成完毕: 布局 {cfg.layout}, {cfg.num_classes} 类, "
        f"train/val/test = {len(splits['train'])}/{len(splits['val'])}/{len(splits['test'])}"
    )
    return SynthDataset(
        config=cfg,
        prototypes=tuple(part[0] for part in stream_parts),
        class_multisets=tuple(multisets),
        style_offsets=tuple(part[2] for part in stream_parts),
        data=VideoDataset(num_classes=cfg.num_classes, splits=splits),
    )


def write_synth_dataset(synth: SynthDataset, out_dir: Path) -> Path:
    """
    写成 AVF1 文件 + 清单，返回清单路径。

    文件名：<split>/cXX_vYYY[_b][_cropN].avf；清单里的路径相对 out_dir。
    另外写一份 synth.toml 记录生成参数。
    """
    out_dir = Path(out_dir)
    lines = []
    for split in SPLITS:
        for video in synth.data.split(split):
            stream_paths = []
            for stream_index, crops in enumerate(video.streams):
                suffix = "" if stream_index == 0 else "_b"
                relative = []
                for crop_index, crop in enumerate(crops):
                    crop_suffix = "" if crop_index == 0 else f"_crop{crop_index}"
                    name = f"{video.video_id}{suffix}{crop_suffix}.avf"
                    write_feature_file(crop, out_dir / name)
                    relative.append(name)
                stream_paths.append(relative)
            lines.append(format_manifest_line(stream_paths, video.labels, split))

    manifest_path = out_dir / MANIFEST_NAME
    try:
        manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        (out_dir / METADATA_NAME).write_text(tomlkit.dumps({"synth": synth.config.to_dict()}), encoding="utf-8")
    except OSError as e:
        raise FeatureIOError(f"写合成数据清单到 '{out_dir}' 失败: {e}") from e
    logger.info(f"合成数据已写到 '{out_dir}'，清单 {manifest_path.name}，共 {len(lines)} 个视频")
    return manifest_path
