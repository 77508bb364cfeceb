# src/fusion/stream_fusion.py
"""
特征层面的融合：concat（逐位置拼通道）、early（两路描述子取并集）、multicrop（多个裁剪取并集）。

聚合是对无序描述子集合求和，所以 early / multicrop 只要把描述子放到同一个 FeatureMap 里即可。
"""

from collections.abc import Sequence
from functools import reduce

import numpy as np

from src.aggregation.feature_map import FeatureMap
from src.common.errors import EmptyInputError, InvalidParameterError, ShapeMismatchError
from src.data_io.models import LabeledVideo

FUSION_MODES = ("none", "concat", "early", "late")


def concat_fuse(a: FeatureMap, b: FeatureMap) -> FeatureMap:
    """位置 (t, i) 的输出描述子是 [a_it ; b_it]，D = a.D + b.D。"""
    if a.T != b.T or a.N != b.N:
        raise ShapeMismatchError(f"concat 融合要求 T、N 相同，收到 a=({a.T}, {a.N}) b=({b.T}, {b.N})")
    return FeatureMap(np.concatenate([a.data, b.data], axis=2))


def early_fuse(a: FeatureMap, b: FeatureMap) -> FeatureMap:
    """
    两路描述子的并集。N 相同时按帧接在后面（T' = a.T + b.T），
    否则摊成一个 a.T·a.N + b.T·b.N 个位置的伪帧。一边没有描述子时直接返回另一边，但维度仍要一致。
    """
    if a.D != b.D:
        raise ShapeMismatchError(f"early 融合要求两路维度相同，收到 {a.D} 和 {b.D}")
    if b.num_descriptors == 0:
        return a
    if a.num_descriptors == 0:
        return b
    if a.N == b.N:
        return FeatureMap(np.concatenate([a.data, b.data], axis=0))
    flat = np.concatenate([a.descriptors(a.data.dtype), b.descriptors(b.data.dtype)], axis=0)
    return FeatureMap(flat[None, :, :])


def multicrop_pool(crops: Sequence[FeatureMap]) -> FeatureMap:
    """所有裁剪的描述子并集，语义和 early_fuse 一样，只是推广到列表。"""
    if not crops:
        raise EmptyInputError("multicrop_pool 至少需要一个裁剪")
    dims = {crop.D for crop in crops}
    if len(dims) > 1:
        raise ShapeMismatchError(f"各裁剪的描述子维度不一致: {sorted(dims)}")
    return reduce(early_fuse, crops)


def check_fusion_mode(fusion: str) -> None:
    if fusion not in FUSION_MODES:
        raise InvalidParameterError(f"未知的融合方式 '{fusion}'，可选 {FUSION_MODES}")


def assemble_video(video: LabeledVideo, fusion: str = "none", stream: int = 0, multicrop: bool = False) -> FeatureMap:
    """
    按融合方式把一个视频的各路、各裁剪拼成一个待聚合的 FeatureMap。

    none / late 只取 stream 指定的那一路（late 融合在分数层面做，两路各自一个模型）；
    concat / early 需要两路特征。multicrop=False 时只用第一个（中心）裁剪。
    """
    check_fusion_mode(fusion)
    if fusion in ("none", "late"):
        crops = video.crops(stream)
        return multicrop_pool(crops if multicrop else crops[:1])

    if video.num_streams < 2:
        raise InvalidParameterError(f"{fusion} 融合需要两路特征，视频 '{video.video_id}' 只有一路")
    crops_a, crops_b = video.crops(0), video.crops(1)
    if not multicrop:
        crops_a, crops_b = crops_a[:1], crops_b[:1]
    if fusion == "early":
        return multicrop_pool([*crops_a, *crops_b])
    if len(crops_a) != len(crops_b):
        raise ShapeMismatchError(f"视频 '{video.video_id}' 两路的裁剪数不同: {len(crops_a)} vs {len(crops_b)}")
    return multicrop_pool([concat_fuse(a, b) for a, b in zip(crops_a, crops_b, strict=True)])
