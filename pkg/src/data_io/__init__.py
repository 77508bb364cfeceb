# 检查点依赖训练模块，按需从 src.data_io.checkpoint 导入
from .feature_file import read_feature_file, write_feature_file
from .manifest import Manifest, format_manifest_line, load_manifest
from .models import SPLITS, LabeledVideo, ManifestEntry, VideoDataset
from .synth import SynthDataset, synth_generate, write_synth_dataset

__all__ = [
    "SPLITS",
    "LabeledVideo",
    "Manifest",
    "ManifestEntry",
    "SynthDataset",
    "VideoDataset",
    "format_manifest_line",
    "load_manifest",
    "read_feature_file",
    "synth_generate",
    "write_feature_file",
    "write_synth_dataset",
]
