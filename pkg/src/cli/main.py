# src/cli/main.py
"""
avlad 命令行入口。

命令行参数覆盖配置文件（config/config.toml 或 --config / AVLAD_CONFIG 指定的文件）里的同名设置。
出错时在 stderr 打印 "error[<类别>]: <信息>"，按错误类别返回非零退出码。
"""

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path

from src.aggregation.pooling import POOLING_MODES
from src.common.custom_logging.logging_config import get_logger
from src.common.errors import ActionVladError
from src.config.avlad_configs import SYNTH_LAYOUTS, ActionVladRootConfig
from src.config.config_manager import get_typed_settings
from src.fusion.stream_fusion import FUSION_MODES

from .commands import (
    ASSIGNMENT_FORMATS,
    STREAM_NAMES,
    cmd_confusion_diff,
    cmd_eval,
    cmd_export_assignments,
    cmd_fuse_scores,
    cmd_gen_synth,
    cmd_init_codebook,
    cmd_train,
    cmd_word_contributions,
    stream_index,
)
from .report import REPORT_FORMATS, write_report

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CODES = {
    "invalid_parameter": 3,
    "shape": 4,
    "non_finite": 5,
    "empty_input": 6,
    "feature_file": 10,
    "bad_magic": 11,
    "bad_version": 12,
    "size_mismatch": 13,
    "dimension_overflow": 14,
    "io": 15,
    "manifest": 20,
    "checkpoint": 30,
    "checksum": 31,
    "checkpoint_version": 32,
    "stage_order": 40,
    "report": 50,
    "score_file": 51,
}

_AP_HELP = "多标签模式：逐类 AP（所有召回点上精度的阶梯和，不插值）、mAP 和按类别样本数加权的 wAP"


def exit_code_for(error: ActionVladError) -> int:
    return EXIT_CODES.get(error.category, EXIT_INTERNAL)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avlad", description="ActionVLAD 视频特征聚合实验工具")
    parser.add_argument("--config", type=Path, default=None, help="配置文件路径，默认 config/config.toml")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="生成合成子动作数据集")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--layout", choices=SYNTH_LAYOUTS)
    p.add_argument("--streams", type=int, choices=(1, 2))
    p.add_argument("--crops", type=int)

    p = sub.add_parser("init-codebook", help="k-means 初始化码本")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--stream", choices=STREAM_NAMES, default="a")
    p.add_argument("--fusion", choices=FUSION_MODES, default="none")
    p.add_argument("--max-iters", type=int)

    p = sub.add_parser("train", help="第一阶段或第二阶段训练")
    p.add_argument("manifest", type=Path)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--pooling", choices=POOLING_MODES)
    p.add_argument("--fusion", choices=FUSION_MODES)
    p.add_argument("--stream", choices=STREAM_NAMES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--accumulation-steps", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--tie-anchors", action="store_true", default=None)
    p.add_argument("--metrics", type=Path, help="每个 epoch 一行指标写到这里，默认打印到标准输出")
    p.add_argument("--deterministic", action="store_true", default=None)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("eval", help="评估并输出报告", description=_AP_HELP)
    p.add_argument("manifest", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--checkpoint-b", type=Path)
    p.add_argument("--split", default="test")
    p.add_argument(
        "--pooling", choices=POOLING_MODES, help="池化方式取自检查点；给出时必须和检查点记录的一致，否则报错"
    )
    p.add_argument("--fusion", choices=FUSION_MODES)
    p.add_argument("--fusion-weight", type=float)
    p.add_argument("--late-space", choices=("probability", "logit"))
    p.add_argument("--multicrop", action="store_true")
    p.add_argument("--external-scores", type=Path)
    p.add_argument("--multi-label", action="store_true", default=None, help=_AP_HELP)
    p.add_argument("--report", type=Path)
    p.add_argument("--format", choices=REPORT_FORMATS)
    p.add_argument("--scores-out", type=Path)
    p.add_argument("--deterministic", action="store_true", default=None)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("export-assignments", help="导出每个描述子的 action word 分配图")
    p.add_argument("manifest", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--format", choices=ASSIGNMENT_FORMATS, default="text")

    p = sub.add_parser("word-contributions", help="按 action word 分解某个类别的得分")
    p.add_argument("video", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--top", type=int)

    p = sub.add_parser("confusion-diff", help="两个报告行归一化后的混淆矩阵之差")
    p.add_argument("report_a", type=Path)
    p.add_argument("report_b", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fuse-scores", help="模型分数和外部分数加权融合")
    p.add_argument("model_scores", type=Path)
    p.add_argument("external_scores", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--fusion-weight", type=float)
    return parser


def _workers(args: argparse.Namespace, settings: ActionVladRootConfig) -> int:
    deterministic = args.deterministic if args.deterministic is not None else settings.runtime.deterministic
    if deterministic:
        return 1
    return args.workers if args.workers is not None else settings.runtime.workers


def _run_gen_synth(args: argparse.Namespace, settings: ActionVladRootConfig) -> None:
    cfg = settings.synth.with_overrides(seed=args.seed, layout=args.layout, streams=args.streams, crops=args.crops)
    manifest = cmd_gen_synth(cfg, args.out)
    print(manifest)


def _run_init_codebook(args: argparse.Namespace, settings: ActionVladRootConfig) -> None:
    codebook_settings = settings.codebook.with_overrides(k=args.k, alpha=args.alpha, kmeans_max_iters=args.max_iters)
    seed = args.seed if args.seed is not None else settings.training.seed
    cmd_init_codebook(
        args.manifest,
        codebook_settings,
        args.out,
        train_config=settings.training,
        seed=seed,
        stream=stream_index(args.stream),
        fusion=args.fusion,
    )


def _run_train(args: argparse.Namespace, settings: ActionVladRootConfig) -> None:
    epochs_field, lr_field = ("stage1_epochs", "stage1_lr") if args.stage == 1 else ("stage2_epochs", "stage2_lr")
    cfg = settings.training.with_overrides(
        pooling=args.pooling,
        batch_size=args.batch_size,
        accumulation_steps=args.accumulation_steps,
        dropout=args.dropout,
        seed=args.seed,
        tie_anchors=args.tie_anchors,
        **{epochs_field: args.epochs, lr_field: args.lr},
    )
    stream = stream_index(args.stream) if args.stream is not None else None
    workers = _workers(args, settings)

    if args.metrics is None:
        cmd_train(args.manifest, args.stage, cfg, args.out, args.checkpoint, args.fusion, stream, workers, print)
        return
    args.metrics.parent.mkdir(parents=True, exist_ok=True)
    with args.metrics.open("w", encoding="utf-8") as sink:
        cmd_train(
            args.manifest,
            args.stage,
            cfg,
            args.out,
            args.checkpoint,
            args.fusion,
            stream,
            workers,
            lambda line: print(line, file=sink, flush=True),
        )


def _run_eval(args: argparse.Namespace, settings: ActionVladRootConfig) -> None:
    evaluation = settings.evaluation.with_overrides(
        fusion_weight=args.fusion_weight, late_fusion_space=args.late_space, report_format=args.format
    )
    report = cmd_eval(
        args.manifest,
        args.checkpoint,
        split=args.split,
        fusion=args.fusion,
        checkpoint_b=args.checkpoint_b,
        fusion_weight=evaluation.fusion_weight,
        late_space=evaluation.late_fusion_space,
        multicrop=args.multicrop,
        external_scores=args.external_scores,
        multi_label=args.multi_label,
        workers=_workers(args, settings),
        scores_out=args.scores_out,
        pooling=args.pooling,
    )
    report.print_table()
    if args.report is not None:
        write_report(args.report, report, evaluation.report_format)
    else:
        sys.stdout.write(report.render(evaluation.report_format))


def _run_export_assignments(args: argparse.Namespace, settings: ActionVladRootConfig) -> None:
    cmd_export_assignments(args.manifest, args.checkpoint, args.out, split=args.split, fmt=args.format)


def _run_word_contributions(args: argparse.Namespace, settings: ActionVladRootConfig) -> None:
    ranked, logit = cmd_word_contributions(args.video, args.checkpoint, args.class_index)
    if args.top is not None:
        ranked = ranked[: args.top]
    print(f"class\t{args.class_index}\tlogit\t{logit!r}")
    for rank, (word, score) in enumerate(ranked, start=1):
        print(f"{rank}\t{word}\t{score!r}")


def _run_confusion_diff(args: argparse.Namespace, settings: ActionVladRootConfig) -> None:
    cmd_confusion_diff(args.report_a, args.report_b, args.out)


def _run_fuse_scores(args: argparse.Namespace, settings: ActionVladRootConfig) -> None:
    weight = settings.evaluation.with_overrides(fusion_weight=args.fusion_weight).fusion_weight
    cmd_fuse_scores(args.model_scores, args.external_scores, args.out, weight)


_HANDLERS = {
    "gen-synth": _run_gen_synth,
    "init-codebook": _run_init_codebook,
    "train": _run_train,
    "eval": _run_eval,
    "export-assignments": _run_export_assignments,
    "word-contributions": _run_word_contributions,
    "confusion-diff": _run_confusion_diff,
    "fuse-scores": _run_fuse_scores,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = get_typed_settings(args.config)
        _HANDLERS[args.command](args, settings)
    except ActionVladError as e:
        print(f"error[{e.category}]: {e.message}", file=sys.stderr)
        return exit_code_for(e)
    except (OSError, ValueError, TypeError) as e:
        # 配置文件里的字段类型不对之类，不属于结构化错误
        print(f"error[internal]: {e}", file=sys.stderr)
        logger.exception("命令执行失败")
        return EXIT_INTERNAL
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
