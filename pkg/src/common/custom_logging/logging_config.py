# src/common/custom_logging/logging_config.py
import os
import sys
import threading
import zipfile
from datetime import datetime, timedelta
from pathlib import Path

from loguru import logger
from loguru._logger import Logger

LOG_DIR = Path(os.getcwd()) / "logs"

MODULE_CONFIG_MAP = {
    # 根模块
    "main": ("主程序", "white"),
    "__main__": ("主程序", "white"),
    # 顶级模块
    "aggregation": ("聚合核心", "light-yellow"),
    "cli": ("命令行", "light-magenta"),
    "codebook": ("码本", "light-cyan"),
    "common": ("通用模块", "white"),
    "config": ("配置管理", "yellow"),
    "data_io": ("数据读写", "cyan"),
    "fusion": ("双流融合", "light-green"),
    "training": ("训练", "light-blue"),
    # 细分
    "aggregation.actionvlad_layer": ("VLAD层", "light-yellow"),
    "aggregation.pooling": ("池化调度", "yellow"),
    "cli.commands": ("实验命令", "light-magenta"),
    "cli.main": ("命令行", "magenta"),
    "cli.report": ("实验报告", "magenta"),
    "codebook.kmeans": ("K均值", "light-cyan"),
    "config.config_io": ("配置IO", "yellow"),
    "config.config_manager": ("配置管理", "yellow"),
    "data_io.checkpoint": ("检查点", "cyan"),
    "data_io.feature_file": ("特征文件", "cyan"),
    "data_io.manifest": ("清单", "cyan"),
    "data_io.synth": ("合成数据", "light-cyan"),
    "fusion.score_fusion": ("分数融合", "green"),
    "training.trainer": ("训练循环", "light-blue"),
}

logger.remove()

_handlers_created = set()
_lock = threading.Lock()


def _display_width(text: str) -> int:
    """汉字按两个字符宽度算。"""
    return sum(2 if "一" <= char <= "鿿" else 1 for char in text)


_MAX_ALIAS_WIDTH = max(_display_width(alias) for alias, _ in MODULE_CONFIG_MAP.values())


def compress_rotated_log(log_file_str: str) -> None:
    """loguru 轮替后的回调：把昨天的日志打成 zip，原文件删掉。"""
    log_file = Path(log_file_str)
    if not log_file.exists() or log_file.suffix != ".log":
        return
    zip_path = log_file.with_suffix(".log.zip")
    try:
        with zipfile.ZipFile(zip_path, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.write(log_file, arcname=log_file.name)
        log_file.unlink()
    except OSError as e:
        logger.error(f"压缩日志 '{log_file.name}' 时失败了: {e}")


def prune_old_archives(log_directory: Path, keep_days: int = 90) -> None:
    """删除超过 keep_days 天的压缩日志。"""
    if not log_directory.is_dir():
        return
    cutoff = datetime.now().date() - timedelta(days=keep_days)
    for archive in log_directory.glob("*/*.log.zip"):
        try:
            archive_date = datetime.strptime(archive.name.removesuffix(".log.zip"), "%Y-%m-%d").date()
        except ValueError:
            continue
        if archive_date < cutoff:
            archive.unlink(missing_ok=True)


def _resolve_alias(module_name: str) -> tuple[str, str]:
    normalized = module_name.replace("\\", ".").removeprefix("src.")
    best_match_key = ""
    for prefix in MODULE_CONFIG_MAP:
        if (normalized == prefix or normalized.startswith(f"{prefix}.")) and len(prefix) > len(best_match_key):
            best_match_key = prefix
    if best_match_key:
        return MODULE_CONFIG_MAP[best_match_key]
    return module_name.split(".")[-1], "white"


def get_logger(module_name: str) -> Logger:
    """
    获取一个为指定模块配置好的 logger 实例。

    同一个别名只注册一次 sink；文件日志按天落在 logs/<别名>/ 下，
    FILE_LOG_LEVEL=OFF 时只输出到控制台。
    """
    alias, color = _resolve_alias(module_name)
    total_padding = max(_MAX_ALIAS_WIDTH - _display_width(alias), 0)
    left_padding = total_padding // 2
    padded_alias = f"{' ' * left_padding}{alias}{' ' * (total_padding - left_padding)}"
    handler_key = f"{alias}_{color}"

    with _lock:
        if handler_key not in _handlers_created:
            console_format = (
                "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | "
                "<level>{level: <5}</level> | "
                f"<{color}><bold>{{extra[padded_alias]}}</bold></{color}> | "
                "<level>{message}</level>"
            )
            logger.add(
                sys.stderr,
                level=os.getenv("CONSOLE_LOG_LEVEL", "INFO").upper(),
                format=console_format,
                filter=lambda record: record["extra"].get("padded_alias") == padded_alias,
                colorize=True,
            )

            file_level = os.getenv("FILE_LOG_LEVEL", "DEBUG").upper()
            if file_level != "OFF":
                log_file_path = LOG_DIR / alias / "{time:YYYY-MM-DD}.log"
                log_file_path.parent.mkdir(parents=True, exist_ok=True)
                if not _handlers_created:
                    prune_old_archives(LOG_DIR)
                logger.add(
                    sink=log_file_path,
                    level=file_level,
                    format="{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <7} | {extra[padded_alias]} | {message}",
                    rotation="00:00",
                    compression=compress_rotated_log,
                    encoding="utf-8",
                    filter=lambda record: record["extra"].get("padded_alias") == padded_alias,
                )
            _handlers_created.add(handler_key)

    return logger.bind(padded_alias=padded_alias)
