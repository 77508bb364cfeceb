from .actionvlad_layer import (
    ActionVladGradients,
    actionvlad_backward,
    actionvlad_encode,
    actionvlad_forward,
    flatten_l2_normalize,
    hard_vlad,
    intra_normalize,
    soft_assign,
    soft_assign_batch,
)
from .baseline_pooling import average_pool, average_pool_backward, max_pool, max_pool_backward
from .feature_map import FeatureMap, RawVlad, VladDescriptor
from .pooling import POOLING_MODES, pool_video, pool_videos, representation_dim

__all__ = [
    "POOLING_MODES",
    "ActionVladGradients",
    "FeatureMap",
    "RawVlad",
    "VladDescriptor",
    "actionvlad_backward",
    "actionvlad_encode",
    "actionvlad_forward",
    "average_pool",
    "average_pool_backward",
    "flatten_l2_normalize",
    "hard_vlad",
    "intra_normalize",
    "max_pool",
    "max_pool_backward",
    "pool_video",
    "pool_videos",
    "representation_dim",
    "soft_assign",
    "soft_assign_batch",
]
