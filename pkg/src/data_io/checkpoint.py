# src/data_io/checkpoint.py
"""
AVC1 检查点：

    magic "AVC1" | u32 version | u32 元数据长度 | 元数据 (UTF-8 TOML)
    | u32 张量个数 | 张量 × n | sha256 (32 字节，覆盖前面所有字节)

    张量 = u16 名字长度 | 名字 | u8 dtype (1 = float64) | u8 ndim | u32 × ndim | 小端 float64 数据

元数据里是 TrainConfig 快照、α、dropout、池化 / 融合方式、所在阶段等；数组都放在张量区，读写逐位不变。
读取顺序：magic → 校验和 → 版本，之后的解析全程做越界检查。
"""

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import tomlkit
from tomlkit.exceptions import TOMLKitError

from src.codebook.codebook import Codebook
from src.common.custom_logging.logging_config import get_logger
from src.common.errors import ActionVladError, CheckpointError, CheckpointVersionError, ChecksumMismatchError
from src.config.avlad_configs import TrainConfig
from src.training.classifier import ClassifierModel
from src.training.optimizer import AdamState

logger = get_logger(__name__)

MAGIC = b"AVC1"
VERSION = 1
DIGEST_SIZE = hashlib.sha256().digest_size
DTYPE_FLOAT64 = 1
_TENSOR_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    """
    stage=0 表示只初始化了码本（还没有分类器）；1 / 2 表示完成了对应的训练阶段。
    avg / max 池化的检查点没有码本。feature_dim 是池化前描述子的维度 D（融合之后的）。
    """

    train_config: TrainConfig
    codebook: Codebook | None = None
    model: ClassifierModel | None = None
    adam_state: AdamState | None = None
    stage: int = 0
    pooling: str = "vlad"
    fusion: str = "none"
    stream: int = 0
    num_classes: int = 0
    feature_dim: int = 0


class _Reader:
    """带越界检查的字节游标，越界就抛 CheckpointError。"""

    def __init__(self, data: bytes, source: str) -> None:
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise CheckpointError(f"'{self.source}' 在偏移 {self.offset} 处被截断（还要 {size} 字节）")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        layout = struct.Struct(fmt)
        return layout.unpack(self.take(layout.size))


def _encode_tensor(name: str, array: np.ndarray) -> bytes:
    encoded_name = name.encode("utf-8")
    array = np.ascontiguousarray(array, dtype=_TENSOR_DTYPE)
    header = struct.pack("<H", len(encoded_name)) + encoded_name + struct.pack("<BB", DTYPE_FLOAT64, array.ndim)
    return header + struct.pack(f"<{array.ndim}I", *array.shape) + array.tobytes()


def _decode_tensor(reader: _Reader) -> tuple[str, np.ndarray]:
    (name_length,) = reader.unpack("<H")
    try:
        name = reader.take(name_length).decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"'{reader.source}' 里的张量名不是合法的 UTF-8") from e
    dtype_code, ndim = reader.unpack("<BB")
    if dtype_code != DTYPE_FLOAT64:
        raise CheckpointError(f"张量 '{name}' 的 dtype 代码 {dtype_code} 不认识")
    shape = reader.unpack(f"<{ndim}I")
    count = int(np.prod(shape, dtype=object)) if shape else 1
    raw = reader.take(count * _TENSOR_DTYPE.itemsize)
    return name, np.frombuffer(raw, dtype=_TENSOR_DTYPE).reshape(shape).astype(np.float64)


def _metadata(ckpt: Checkpoint) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "stage": ckpt.stage,
        "pooling": ckpt.pooling,
        "fusion": ckpt.fusion,
        "stream": ckpt.stream,
        "num_classes": ckpt.num_classes,
        "feature_dim": ckpt.feature_dim,
    }
    if ckpt.codebook is not None:
        meta["alpha"] = ckpt.codebook.alpha
    if ckpt.model is not None:
        meta["dropout_rate"] = ckpt.model.dropout_rate
    if ckpt.adam_state is not None:
        meta["adam_t"] = ckpt.adam_state.t
        meta["adam_tensors"] = sorted(ckpt.adam_state.m)
    # 表放在最后，前面的标量才不会被写进表里
    meta["train_config"] = ckpt.train_config.to_dict()
    return meta


def _tensors(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    tensors: list[tuple[str, np.ndarray]] = []
    if ckpt.codebook is not None:
        tensors += [
            ("codebook.residual_anchors", ckpt.codebook.residual_anchors),
            ("codebook.assign_anchors", ckpt.codebook.assign_anchors),
        ]
    if ckpt.model is not None:
        tensors += [("model.W", ckpt.model.W), ("model.b", ckpt.model.b)]
    if ckpt.adam_state is not None:
        for name in sorted(ckpt.adam_state.m):
            tensors += [(f"adam.m.{name}", ckpt.adam_state.m[name]), (f"adam.v.{name}", ckpt.adam_state.v[name])]
    return tensors


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta_bytes = tomlkit.dumps(_metadata(ckpt)).encode("utf-8")
    tensors = _tensors(ckpt)
    body = b"".join(
        [
            MAGIC,
            struct.pack("<II", VERSION, len(meta_bytes)),
            meta_bytes,
            struct.pack("<I", len(tensors)),
            *(_encode_tensor(name, array) for name, array in tensors),
        ]
    )
    return body + hashlib.sha256(body).digest()


def _build_checkpoint(meta: dict[str, Any], tensors: dict[str, np.ndarray]) -> Checkpoint:
    train_config = TrainConfig.from_dict(meta["train_config"])
    codebook = None
    if "codebook.residual_anchors" in tensors:
        codebook = Codebook(
            residual_anchors=tensors["codebook.residual_anchors"],
            assign_anchors=tensors["codebook.assign_anchors"],
            alpha=meta["alpha"],
        )
    model = None
    if "model.W" in tensors:
        model = ClassifierModel(W=tensors["model.W"], b=tensors["model.b"], dropout_rate=meta["dropout_rate"])
    adam_state = None
    if "adam_t" in meta:
        names = list(meta["adam_tensors"])
        adam_state = AdamState(
            m={name: tensors[f"adam.m.{name}"] for name in names},
            v={name: tensors[f"adam.v.{name}"] for name in names},
            t=int(meta["adam_t"]),
        )
    return Checkpoint(
        train_config=train_config,
        codebook=codebook,
        model=model,
        adam_state=adam_state,
        stage=int(meta["stage"]),
        pooling=str(meta["pooling"]),
        fusion=str(meta["fusion"]),
        stream=int(meta["stream"]),
        num_classes=int(meta["num_classes"]),
        feature_dim=int(meta["feature_dim"]),
    )


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"'{source}' 不是 AVC1 检查点（magic 不对）")
    if len(data) < len(MAGIC) + DIGEST_SIZE:
        raise CheckpointError(f"'{source}' 太短，连校验和都放不下")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatchError(f"'{source}' 的校验和不匹配，文件可能损坏了")

    reader = _Reader(body, source)
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"'{source}' 的检查点版本是 {version}，只支持 {VERSION}")
    (meta_length,) = reader.unpack("<I")
    try:
        meta = tomlkit.loads(reader.take(meta_length).decode("utf-8")).unwrap()
    except (UnicodeDecodeError, TOMLKitError) as e:
        raise CheckpointError(f"'{source}' 的元数据解析失败: {e}") from e

    (tensor_count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(tensor_count):
        name, array = _decode_tensor(reader)
        tensors[name] = array
    if reader.offset != len(body):
        raise CheckpointError(f"'{source}' 的张量区后面还有 {len(body) - reader.offset} 字节多余数据")

    try:
        return _build_checkpoint(meta, tensors)
    except ActionVladError as e:
        raise CheckpointError(f"'{source}' 的内容不合法: {e.message}") from e
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"'{source}' 的内容不完整或类型不对: {e}") from e


def save_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    data = encode_checkpoint(ckpt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise CheckpointError(f"写检查点 '{path}' 失败: {e}") from e
    logger.info(f"检查点已保存到 '{path}' (阶段 {ckpt.stage}, 池化 {ckpt.pooling}, {len(data)} 字节)")


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"读检查点 '{path}' 失败: {e}") from e
    ckpt = decode_checkpoint(data, source=str(path))
    logger.debug(f"已加载检查点 '{path}' (阶段 {ckpt.stage})")
    return ckpt
