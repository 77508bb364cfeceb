# src/data_io/feature_file.py
"""
AVF1 特征文件：

    magic  "AVF1"        4 字节
    version u32           目前只有 1
    T, N, D u32 ×3
    payload T·N·D 个小端 float32，行主序 (t, i, j)，没有对齐填充

读取时先校验头再看长度，任何字节串都只会得到结构化错误。
"""

import struct
from pathlib import Path

import numpy as np

from src.aggregation.feature_map import FeatureMap
from src.common.custom_logging.logging_config import get_logger
from src.common.errors import (
    BadMagicError,
    DimensionOverflowError,
    FeatureIOError,
    SizeMismatchError,
    UnsupportedVersionError,
)

logger = get_logger(__name__)

MAGIC = b"AVF1"
VERSION = 1
HEADER = struct.Struct("<4sIIII")
PAYLOAD_DTYPE = np.dtype("<f4")

MAX_ELEMENTS = 1 << 31
"""单个文件最多的 float 个数（8 GiB），头里的维度乘积超过它直接拒绝。"""

_U32_MAX = 0xFFFFFFFF


def expected_payload_floats(T: int, N: int, D: int) -> int:  # noqa: N803
    return T * N * D


def encode_feature_map(f: FeatureMap) -> bytes:
    """float64 的 FeatureMap 会被压到 float32。"""
    if max(f.T, f.N, f.D) > _U32_MAX or f.T * f.N * f.D > MAX_ELEMENTS:
        raise DimensionOverflowError(f"FeatureMap ({f.T}, {f.N}, {f.D}) 超出 AVF1 能表示的范围")
    header = HEADER.pack(MAGIC, VERSION, f.T, f.N, f.D)
    return header + np.ascontiguousarray(f.data, dtype=PAYLOAD_DTYPE).tobytes()


def decode_feature_map(data: bytes, source: str = "<bytes>") -> FeatureMap:
    if len(data) < HEADER.size:
        raise SizeMismatchError(f"'{source}' 只有 {len(data)} 字节，连 {HEADER.size} 字节的文件头都不够")
    magic, version, T, N, D = HEADER.unpack_from(data)  # noqa: N806
    if magic != MAGIC:
        raise BadMagicError(f"'{source}' 的 magic 是 {magic!r}，不是 {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"'{source}' 的版本是 {version}，只支持 {VERSION}")
    count = expected_payload_floats(T, N, D)
    if count > MAX_ELEMENTS:
        raise DimensionOverflowError(
            f"'{source}' 的头声明了 ({T}, {N}, {D})，共 {count} 个 float，超过上限 {MAX_ELEMENTS}"
        )
    payload_size = len(data) - HEADER.size
    if payload_size != count * PAYLOAD_DTYPE.itemsize:
        raise SizeMismatchError(
            f"'{source}' 的数据区有 {payload_size} 字节，头 ({T}, {N}, {D}) 要求 {count * PAYLOAD_DTYPE.itemsize} 字节"
        )
    values = np.frombuffer(data, dtype=PAYLOAD_DTYPE, count=count, offset=HEADER.size)
    return FeatureMap(values.astype(np.float32).reshape(T, N, D))


def write_feature_file(f: FeatureMap, path: Path) -> None:
    path = Path(path)
    encoded = encode_feature_map(f)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encoded)
    except OSError as e:
        raise FeatureIOError(f"写特征文件 '{path}' 失败: {e}") from e
    logger.debug(f"已写出特征文件 '{path}' ({f.T}, {f.N}, {f.D})")


def read_feature_file(path: Path) -> FeatureMap:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise FeatureIOError(f"读特征文件 '{path}' 失败: {e}") from e
    feature_map = decode_feature_map(data, source=str(path))
    logger.debug(f"已读取特征文件 '{path}' ({feature_map.T}, {feature_map.N}, {feature_map.D})")
    return feature_map
