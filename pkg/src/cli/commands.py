# src/cli/commands.py
"""
命令行各子命令背后的实验操作。每个 cmd_* 只接收显式参数（配置对象、路径），不读全局配置，
方便测试直接调用。
"""

import time
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np

from src.aggregation.actionvlad_layer import actionvlad_encode, soft_assign_batch
from src.aggregation.feature_map import FeatureMap, VladDescriptor
from src.aggregation.pooling import pool_videos
from src.codebook.kmeans import kmeans_init, sample_descriptors
from src.common.custom_logging.logging_config import get_logger
from src.common.errors import (
    EmptyInputError,
    FeatureIOError,
    InvalidParameterError,
    ReportError,
    ShapeMismatchError,
    StageOrderError,
)
from src.config.avlad_configs import CodebookSettings, SynthConfig, TrainConfig
from src.data_io.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.data_io.feature_file import read_feature_file
from src.data_io.manifest import Manifest, load_manifest
from src.data_io.models import LabeledVideo
from src.data_io.synth import synth_generate, write_synth_dataset
from src.fusion.score_fusion import (
    ScoreVector,
    fuse_score_tables,
    late_fuse,
    read_score_file,
    write_score_file,
)
from src.fusion.stream_fusion import assemble_video, check_fusion_mode
from src.training.classifier import ClassifierModel, classifier_forward_batch
from src.training.trainer import EpochMetrics, TrainingExample, TrainingResult, train_stage1, train_stage2

from .report import ExperimentReport, confusion_diff, load_report

logger = get_logger(__name__)

STREAM_NAMES = ("a", "b")
ASSIGNMENT_FORMATS = ("text", "npy")
METRICS_HEADER = "epoch\tstage\ttrain_loss\tval_acc"

MetricsSink = Callable[[str], None]


def stream_index(name: str | int) -> int:
    if isinstance(name, int):
        return name
    if name not in STREAM_NAMES:
        raise InvalidParameterError(f"未知的特征流 '{name}'，可选 {STREAM_NAMES}")
    return STREAM_NAMES.index(name)


def _assemble_all(
    videos: Sequence[LabeledVideo], fusion: str, stream: int, multicrop: bool = False
) -> list[FeatureMap]:
    return [assemble_video(video, fusion=fusion, stream=stream, multicrop=multicrop) for video in videos]


def _check_feature_dim(features: Sequence[FeatureMap], expected: int, source: str) -> None:
    dims = {f.D for f in features if f.num_descriptors}
    if dims and dims != {expected}:
        raise ShapeMismatchError(f"特征维度 {sorted(dims)} 和检查点 '{source}' 的 {expected} 不一致")


def _resolve_fusion(requested: str | None, ckpt: Checkpoint | None) -> str:
    fusion = requested or (ckpt.fusion if ckpt is not None else "none")
    check_fusion_mode(fusion)
    if ckpt is not None and requested is not None and ckpt.fusion != fusion:
        if not (fusion == "late" and ckpt.fusion in ("none", "late")):
            raise InvalidParameterError(f"检查点是按 '{ckpt.fusion}' 融合训练的，不能用 '{fusion}'")
    return fusion


def _check_pooling(requested: str | None, ckpt: Checkpoint, path: Path) -> None:
    if requested is not None and requested != ckpt.pooling:
        raise InvalidParameterError(f"检查点 '{path}' 是按 '{ckpt.pooling}' 池化训练的，不能按 '{requested}' 评估")


# --- gen-synth ---


def cmd_gen_synth(cfg: SynthConfig, out_dir: Path) -> Path:
    """生成合成数据集并写到 out_dir，返回清单路径。"""
    return write_synth_dataset(synth_generate(cfg), Path(out_dir))


# --- init-codebook ---


def cmd_init_codebook(
    manifest_path: Path,
    settings: CodebookSettings,
    out: Path,
    train_config: TrainConfig | None = None,
    seed: int = 0,
    stream: int = 0,
    fusion: str = "none",
) -> Checkpoint:
    """从训练划分抽样描述子跑 k-means，写出只含码本的检查点（stage 0）。"""
    check_fusion_mode(fusion)
    manifest = load_manifest(manifest_path)
    videos = manifest.load_split("train")
    if not videos:
        raise EmptyInputError(f"清单 '{manifest_path}' 没有训练视频")
    features = _assemble_all(videos, fusion, stream)

    samples = sample_descriptors(features, settings.max_samples, seed=seed)
    codebook = kmeans_init(samples, settings.k, max_iters=settings.kmeans_max_iters, seed=seed, alpha=settings.alpha)

    base = train_config or TrainConfig()
    ckpt = Checkpoint(
        train_config=base.with_overrides(k=settings.k, alpha=settings.alpha, seed=seed),
        codebook=codebook,
        stage=0,
        pooling="vlad",
        fusion=fusion,
        stream=stream,
        num_classes=manifest.num_classes,
        feature_dim=codebook.D,
    )
    save_checkpoint(out, ckpt)
    return ckpt


# --- train ---


def _training_examples(videos: Sequence[LabeledVideo], fusion: str, stream: int) -> list[TrainingExample]:
    features = _assemble_all(videos, fusion, stream)
    return [TrainingExample(features=f, labels=video.labels) for f, video in zip(features, videos, strict=True)]


def cmd_train(
    manifest_path: Path,
    stage: int,
    cfg: TrainConfig,
    out: Path,
    checkpoint_in: Path | None = None,
    fusion: str | None = None,
    stream: int | None = None,
    workers: int = 1,
    metrics_sink: MetricsSink | None = None,
) -> TrainingResult:
    """
    跑一个训练阶段并写出检查点。

    第一阶段：vlad 池化需要 init-codebook 的检查点，avg / max 不需要。
    第二阶段：必须接在 vlad 第一阶段的检查点后面。
    metrics_sink 收到表头和每个 epoch 一行指标。
    """
    if stage not in (1, 2):
        raise InvalidParameterError(f"stage 只能是 1 或 2，收到 {stage}")
    ckpt = load_checkpoint(checkpoint_in) if checkpoint_in is not None else None
    fusion = _resolve_fusion(fusion, ckpt)
    if fusion == "late":
        fusion = "none"
    if stream is None:
        stream = ckpt.stream if ckpt is not None else 0

    if stage == 2:
        if ckpt is None or ckpt.stage < 1 or ckpt.model is None:
            raise StageOrderError("第二阶段需要第一阶段训练好的检查点（--checkpoint）")
        if ckpt.pooling != "vlad" or ckpt.codebook is None:
            raise StageOrderError(f"第二阶段只接在 vlad 池化的第一阶段后面，检查点的池化是 '{ckpt.pooling}'")
        cfg = cfg.with_overrides(pooling="vlad", k=ckpt.codebook.K, alpha=ckpt.codebook.alpha)
    elif cfg.pooling == "vlad" and (ckpt is None or ckpt.codebook is None):
        raise StageOrderError("vlad 池化的第一阶段需要先跑 init-codebook 得到码本（--checkpoint）")

    manifest = load_manifest(manifest_path)
    train_set = _training_examples(manifest.load_split("train"), fusion, stream)
    val_set = _training_examples(manifest.load_split("val"), fusion, stream)
    if not train_set:
        raise EmptyInputError(f"清单 '{manifest_path}' 没有训练视频")
    feature_dim = train_set[0].features.D
    codebook = ckpt.codebook if ckpt is not None and cfg.pooling == "vlad" else None
    if codebook is not None:
        _check_feature_dim([ex.features for ex in train_set + val_set], codebook.D, str(checkpoint_in))
        cfg = cfg.with_overrides(k=codebook.K, alpha=codebook.alpha)

    def on_epoch(metrics: EpochMetrics) -> None:
        if metrics_sink is not None:
            metrics_sink(metrics.to_line())

    if metrics_sink is not None:
        metrics_sink(METRICS_HEADER)
    if stage == 1:
        result = train_stage1(
            train_set, codebook, cfg, val_set, num_classes=manifest.num_classes, workers=workers, on_epoch=on_epoch
        )
    else:
        result = train_stage2(train_set, codebook, ckpt.model, cfg, val_set, workers=workers, on_epoch=on_epoch)

    save_checkpoint(
        out,
        Checkpoint(
            train_config=cfg,
            codebook=result.codebook,
            model=result.model,
            adam_state=result.adam_state,
            stage=stage,
            pooling=cfg.pooling,
            fusion=fusion,
            stream=stream,
            num_classes=result.model.C,
            feature_dim=feature_dim,
        ),
    )
    logger.info(f"第 {stage} 阶段完成，保留 epoch {result.best_epoch}（val_acc={result.best_val_acc:.4f}）")
    return result


# --- eval ---


def _require_model(ckpt: Checkpoint, source: Path) -> ClassifierModel:
    if ckpt.model is None or ckpt.stage < 1:
        raise StageOrderError(f"检查点 '{source}' 还没有训练过分类器")
    return ckpt.model


def score_videos(
    videos: Sequence[LabeledVideo],
    ckpt: Checkpoint,
    fusion: str,
    multicrop: bool = False,
    workers: int = 1,
    source: str = "<checkpoint>",
) -> np.ndarray:
    """按检查点的池化方式编码并分类，返回 (视频数, C) 的 logit。"""
    model = _require_model(ckpt, Path(source))
    features = _assemble_all(videos, fusion, ckpt.stream, multicrop=multicrop)
    _check_feature_dim(features, ckpt.feature_dim, source)
    representations = pool_videos(features, ckpt.pooling, ckpt.codebook, workers=workers)
    if representations.shape[1] != model.feature_dim:
        raise ShapeMismatchError(f"表示维度 {representations.shape[1]} 和分类器的 {model.feature_dim} 不一致")
    return classifier_forward_batch(representations, model)


def cmd_eval(
    manifest_path: Path,
    checkpoint_path: Path,
    split: str = "test",
    fusion: str | None = None,
    checkpoint_b: Path | None = None,
    fusion_weight: float = 0.5,
    late_space: str = "probability",
    multicrop: bool = False,
    external_scores: Path | None = None,
    multi_label: bool | None = None,
    workers: int = 1,
    scores_out: Path | None = None,
    pooling: str | None = None,
) -> ExperimentReport:
    """
    在指定划分上评估。late 融合用两个单流检查点（各自记录了用哪一路），
    外部分数在模型分数算完之后再按 fusion_weight 融合。
    池化方式总是用检查点里记录的；给了 pooling 就只核对它和检查点一致。
    """
    started = time.perf_counter()
    ckpt = load_checkpoint(checkpoint_path)
    _check_pooling(pooling, ckpt, checkpoint_path)
    fusion = _resolve_fusion(fusion, ckpt)
    manifest: Manifest = load_manifest(manifest_path)
    videos = manifest.load_split(split)
    if not videos:
        raise EmptyInputError(f"清单 '{manifest_path}' 的 {split} 划分没有视频")
    loaded = time.perf_counter()

    if fusion == "late":
        if checkpoint_b is None:
            raise InvalidParameterError("late 融合需要第二个检查点（--checkpoint-b）")
        ckpt_b = load_checkpoint(checkpoint_b)
        _check_pooling(pooling, ckpt_b, checkpoint_b)
        if ckpt_b.fusion not in ("none", "late"):
            raise InvalidParameterError(f"late 融合的第二个检查点必须是单流模型，它是按 '{ckpt_b.fusion}' 融合训练的")
        logits_a = score_videos(videos, ckpt, "none", multicrop, workers, str(checkpoint_path))
        logits_b = score_videos(videos, ckpt_b, "none", multicrop, workers, str(checkpoint_b))
        if logits_a.shape != logits_b.shape:
            raise ShapeMismatchError(f"两个检查点的类别数不一致: {logits_a.shape[1]} vs {logits_b.shape[1]}")
        scores = {
            video.video_id: late_fuse(
                ScoreVector.from_logits(la, late_space), ScoreVector.from_logits(lb, late_space), fusion_weight
            )
            for video, la, lb in zip(videos, logits_a, logits_b, strict=True)
        }
    else:
        logits = score_videos(videos, ckpt, fusion, multicrop, workers, str(checkpoint_path))
        scores = {
            video.video_id: ScoreVector.from_logits(row, late_space) for video, row in zip(videos, logits, strict=True)
        }
    scored = time.perf_counter()

    if external_scores is not None:
        external = read_score_file(external_scores)
        scores = fuse_score_tables(scores, external, fusion_weight)
    if scores_out is not None:
        write_score_file(scores_out, scores)

    if multi_label is None:
        multi_label = manifest.is_multi_label
    matrix = np.stack([scores[video.video_id].values for video in videos])
    settings = {
        "checkpoint": str(checkpoint_path),
        "pooling": ckpt.pooling,
        "fusion": fusion,
        "multicrop": multicrop,
        "score_space": late_space,
    }
    if checkpoint_b is not None and fusion == "late":
        settings["checkpoint_b"] = str(checkpoint_b)
    if fusion == "late" or external_scores is not None:
        settings["fusion_weight"] = fusion_weight
    if external_scores is not None:
        settings["external_scores"] = str(external_scores)

    report = ExperimentReport.from_predictions(
        split,
        matrix,
        [video.labels for video in videos],
        manifest.num_classes,
        multi_label=multi_label,
        timings={"load": loaded - started, "score": scored - loaded, "total": time.perf_counter() - started},
        settings=settings,
    )
    logger.info(f"{split} 划分评估完成: {report.num_videos} 个视频, 准确率 {report.accuracy:.4f}")
    return report


# --- export-assignments ---


def assignment_map(f: FeatureMap, ckpt: Checkpoint) -> np.ndarray:
    """每个描述子软分配最大的那个 action word，(T, N) 整数网格，并列取下标最小的。"""
    if ckpt.codebook is None:
        raise InvalidParameterError("检查点里没有码本，没法导出分配图")
    if f.num_descriptors == 0:
        return np.zeros((f.T, f.N), dtype=np.int64)
    P = soft_assign_batch(f.descriptors(), ckpt.codebook)  # noqa: N806
    return np.argmax(P, axis=1).reshape(f.T, f.N).astype(np.int64)


def _write_assignment_map(grid: np.ndarray, path: Path, fmt: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "npy":
            np.save(path, grid)
        else:
            path.write_text("".join(" ".join(str(int(k)) for k in row) + "\n" for row in grid), encoding="utf-8")
    except OSError as e:
        raise FeatureIOError(f"写分配图 '{path}' 失败: {e}") from e


def cmd_export_assignments(
    manifest_path: Path,
    checkpoint_path: Path,
    out_dir: Path,
    split: str = "test",
    fmt: str = "text",
) -> list[Path]:
    """每个视频一个文件：text 是 T 行、每行 N 个整数；npy 是 numpy 的 (T, N) int64 数组。"""
    if fmt not in ASSIGNMENT_FORMATS:
        raise InvalidParameterError(f"未知的分配图格式 '{fmt}'，可选 {ASSIGNMENT_FORMATS}")
    ckpt = load_checkpoint(checkpoint_path)
    fusion = "none" if ckpt.fusion == "late" else ckpt.fusion
    videos = load_manifest(manifest_path).load_split(split)
    suffix = ".npy" if fmt == "npy" else ".txt"

    written = []
    for video in videos:
        grid = assignment_map(assemble_video(video, fusion=fusion, stream=ckpt.stream), ckpt)
        path = Path(out_dir) / f"{video.video_id}{suffix}"
        _write_assignment_map(grid, path, fmt)
        written.append(path)
    logger.info(f"已导出 {len(written)} 个视频的分配图到 '{out_dir}'")
    return written


# --- word-contributions ---


def word_contributions(v: VladDescriptor, model: ClassifierModel, class_index: int) -> np.ndarray:
    """s_k = ⟨W[class] 的第 k 块, v 的第 k 块⟩。Σ s_k + b[class] 就是该类的 logit。"""
    if not 0 <= class_index < model.C:
        raise InvalidParameterError(f"类别 {class_index} 超出范围 [0, {model.C})")
    if model.feature_dim != v.K * v.D:
        raise ShapeMismatchError(f"分类器输入维度 {model.feature_dim} 和 K·D={v.K * v.D} 不一致")
    weights = model.W[class_index].reshape(v.K, v.D)
    return np.einsum("kd,kd->k", weights, v.values.reshape(v.K, v.D))


def rank_words(contributions: np.ndarray) -> list[tuple[int, float]]:
    """按贡献从大到小排，相同时下标小的在前。"""
    order = sorted(range(len(contributions)), key=lambda k: (-contributions[k], k))
    return [(k, float(contributions[k])) for k in order]


def cmd_word_contributions(
    video_path: Path, checkpoint_path: Path, class_index: int
) -> tuple[list[tuple[int, float]], float]:
    """返回 (排好序的 (k, s_k) 列表, 该类的 logit)。"""
    ckpt = load_checkpoint(checkpoint_path)
    model = _require_model(ckpt, Path(checkpoint_path))
    if ckpt.pooling != "vlad" or ckpt.codebook is None:
        raise InvalidParameterError(f"只有 vlad 池化的模型能按 action word 分解，检查点的池化是 '{ckpt.pooling}'")
    f = read_feature_file(video_path)
    if f.D != ckpt.codebook.D:
        raise ShapeMismatchError(f"视频描述子维度 {f.D} 和码本的 {ckpt.codebook.D} 不一致")
    v = actionvlad_encode(f, ckpt.codebook)
    contributions = word_contributions(v, model, class_index)
    logit = float(contributions.sum() + model.b[class_index])
    return rank_words(contributions), logit


# --- confusion-diff / fuse-scores ---


def cmd_confusion_diff(report_a: Path, report_b: Path, out: Path) -> np.ndarray:
    """行归一化后相减，写成每行一条、制表符分隔的文本。"""
    a, b = load_report(report_a), load_report(report_b)
    diff = confusion_diff(a.confusion, b.confusion)
    try:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(
            "".join("\t".join(repr(float(value)) for value in row) + "\n" for row in diff), encoding="utf-8"
        )
    except OSError as e:
        raise ReportError(f"写混淆矩阵差 '{out}' 失败: {e}") from e

    improved = np.argsort(-np.diag(diff), kind="stable")[:5]
    summary = ", ".join(f"{int(c)}({diff[c, c]:+.3f})" for c in improved)
    logger.info(f"对角线提升最多的类别: {summary}")
    return diff


def cmd_fuse_scores(model_scores: Path, external_scores: Path, out: Path, fusion_weight: float = 0.5) -> int:
    """两个分数文件逐视频融合，返回写出的视频数。"""
    fused = fuse_score_tables(read_score_file(model_scores), read_score_file(external_scores), fusion_weight)
    write_score_file(out, fused)
    logger.info(f"已融合 {len(fused)} 个视频的分数到 '{out}'")
    return len(fused)
