# config_manager.py - 配置总指挥
import os
import re
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from src.common.custom_logging.logging_config import get_logger
from src.common.errors import InvalidParameterError

from .avlad_configs import ActionVladRootConfig
from .config_io import ConfigIOHandler
from .config_paths import CONFIG_PATH_ENV, EXPECTED_CONFIG_VERSION, PROJECT_ROOT

logger = get_logger(__name__)

_ENV_PLACEHOLDER = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")

_loaded_typed_settings: ActionVladRootConfig | None = None


def _coerce_env_value(raw: str) -> Any:
    """环境变量都是字符串，按 bool / int / float / str 的顺序猜一下类型。"""
    lowered = raw.strip().lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for caster in (int, float):
        try:
            return caster(raw)
        except ValueError:
            continue
    return raw


def substitute_env_vars_recursive(node: Any) -> Any:
    """把配置里所有 "${VAR}" 形式的值换成环境变量；变量没设置时保留原样并警告。"""
    if isinstance(node, dict):
        return {key: substitute_env_vars_recursive(value) for key, value in node.items()}
    if isinstance(node, list):
        return [substitute_env_vars_recursive(item) for item in node]
    if isinstance(node, str):
        match = _ENV_PLACEHOLDER.match(node)
        if match:
            env_value = os.getenv(match.group(1))
            if env_value is None:
                logger.warning(f"环境变量 '{match.group(1)}' 没有设置，占位符原样保留")
                return node
            return _coerce_env_value(env_value)
    return node


def _resolve_config_path(config_path: Path | None) -> tuple[Path, bool]:
    """返回 (配置文件路径, 是否是显式指定的)。"""
    if config_path is not None:
        return Path(config_path), True
    env_path = os.getenv(CONFIG_PATH_ENV)
    if env_path:
        return Path(env_path), True
    return ConfigIOHandler().runtime_path, False


def load_settings(config_path: Path | None = None) -> dict:
    """
    读出配置字典：.env → config.toml（或 AVLAD_CONFIG 指定的文件）→ ${VAR} 替换。

    默认位置的 config.toml 不存在时从模板复制一份；模板也没有就返回空字典，全部用默认值。
    显式指定的文件不存在则直接报错。
    """
    dotenv_path = PROJECT_ROOT / ".env"
    if dotenv_path.exists():
        load_dotenv(dotenv_path=dotenv_path, override=False)
        logger.debug(f"已加载 .env 文件: {dotenv_path}")

    path, explicit = _resolve_config_path(config_path)
    io_handler = ConfigIOHandler(runtime_path=path)
    if not io_handler.runtime_config_exists():
        if explicit:
            raise InvalidParameterError(f"指定的配置文件 '{path}' 不存在")
        if not io_handler.copy_template_to_runtime():
            return {}

    document = io_handler.load_toml_file(path)
    settings = substitute_env_vars_recursive(document.unwrap())

    version = settings.get("inner", {}).get("version")
    if version is not None and version != EXPECTED_CONFIG_VERSION:
        logger.warning(f"配置文件版本 {version} 和代码期望的 {EXPECTED_CONFIG_VERSION} 不一致，缺的项会用默认值")
    return settings


def _apply_env_overrides(config: ActionVladRootConfig) -> ActionVladRootConfig:
    workers = os.getenv("AVLAD_WORKERS")
    if workers:
        config.runtime = config.runtime.with_overrides(workers=_int_from_env("AVLAD_WORKERS", workers))
        logger.debug("已从环境变量 AVLAD_WORKERS 更新线程数")
    seed = os.getenv("AVLAD_SEED")
    if seed:
        seed_value = _int_from_env("AVLAD_SEED", seed)
        config.training = config.training.with_overrides(seed=seed_value)
        config.synth = config.synth.with_overrides(seed=seed_value)
        logger.debug("已从环境变量 AVLAD_SEED 更新随机种子")
    return config


def _int_from_env(name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError as e:
        raise InvalidParameterError(f"环境变量 {name} 必须是整数，收到 '{raw}'") from e


def get_typed_settings(config_path: Path | None = None, reload: bool = False) -> ActionVladRootConfig:
    """获取类型化的配置对象。默认路径的结果会缓存，显式路径每次都重新读。"""
    global _loaded_typed_settings
    if config_path is None and not reload and _loaded_typed_settings is not None:
        return _loaded_typed_settings

    settings = load_settings(config_path)
    try:
        typed_config = ActionVladRootConfig.from_dict(settings)
    except (ValueError, TypeError) as e:
        if isinstance(e, InvalidParameterError):
            raise
        raise InvalidParameterError(f"配置转换为类型化对象失败: {e}") from e
    typed_config = _apply_env_overrides(typed_config)

    if config_path is None:
        _loaded_typed_settings = typed_config
    logger.debug("配置已加载并转换为类型化对象")
    return typed_config
