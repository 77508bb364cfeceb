from .score_fusion import (
    SCORE_KINDS,
    ScoreVector,
    fuse_score_tables,
    late_fuse,
    minmax_normalize,
    read_score_file,
    score_fuse_external,
    write_score_file,
)
from .stream_fusion import FUSION_MODES, assemble_video, concat_fuse, early_fuse, multicrop_pool

__all__ = [
    "FUSION_MODES",
    "SCORE_KINDS",
    "ScoreVector",
    "assemble_video",
    "concat_fuse",
    "early_fuse",
    "fuse_score_tables",
    "late_fuse",
    "minmax_normalize",
    "multicrop_pool",
    "read_score_file",
    "score_fuse_external",
    "write_score_file",
]
