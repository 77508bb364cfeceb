"""
配置文件输入输出。
只管磁盘上的事：读 TOML、写 TOML、需要时从模板复制一份运行时配置。
"""

import shutil
from pathlib import Path

import tomlkit

from src.common.custom_logging.logging_config import get_logger
from src.common.errors import InvalidParameterError

from .config_paths import ACTUAL_CONFIG_FILENAME, CONFIG_TEMPLATE_FILENAME, RUNTIME_CONFIG_DIR, TEMPLATE_DIR

logger = get_logger(__name__)


class ConfigIOHandler:
    """封装配置文件相关的文件操作和 TOML 处理。"""

    def __init__(self, runtime_path: Path | None = None, template_path: Path | None = None) -> None:
        self.template_path: Path = template_path or TEMPLATE_DIR / CONFIG_TEMPLATE_FILENAME
        self.runtime_path: Path = runtime_path or RUNTIME_CONFIG_DIR / ACTUAL_CONFIG_FILENAME

    def template_exists(self) -> bool:
        exists = self.template_path.exists()
        logger.debug(f"模板文件 '{self.template_path}' 是否存在: {exists}")
        return exists

    def runtime_config_exists(self) -> bool:
        exists = self.runtime_path.exists()
        logger.debug(f"运行时文件 '{self.runtime_path}' 是否存在: {exists}")
        return exists

    def load_toml_file(self, file_path: Path) -> tomlkit.TOMLDocument:
        """读取 TOML 文件；文件不存在或解析失败都抛 InvalidParameterError。"""
        if not file_path.exists():
            raise InvalidParameterError(f"配置文件 '{file_path}' 不存在")
        try:
            with open(file_path, encoding="utf-8") as f:
                data = tomlkit.load(f)
        except tomlkit.exceptions.TOMLKitError as e:
            raise InvalidParameterError(f"解析 TOML 文件 '{file_path}' 失败: {e}") from e
        except OSError as e:
            raise InvalidParameterError(f"读取配置文件 '{file_path}' 失败: {e}") from e
        logger.debug(f"TOML 文件 '{file_path}' 加载成功")
        return data

    def save_toml_file(self, file_path: Path, data: tomlkit.TOMLDocument | dict) -> None:
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            with open(file_path, "w", encoding="utf-8") as f:
                tomlkit.dump(data, f)
        except OSError as e:
            raise InvalidParameterError(f"保存 TOML 文件 '{file_path}' 失败: {e}") from e
        logger.debug(f"TOML 数据已保存到 '{file_path}'")

    def copy_template_to_runtime(self) -> bool:
        """从模板复制出运行时配置。模板不在就返回 False，调用方退回默认值。"""
        if not self.template_exists():
            logger.warning(f"模板文件 '{self.template_path}' 不见了，只能用代码里的默认值")
            return False
        try:
            self.runtime_path.parent.mkdir(parents=True, exist_ok=True)
            shutil.copy2(self.template_path, self.runtime_path)
        except OSError as e:
            logger.warning(f"复制模板文件失败，只能用代码里的默认值: {e}")
            return False
        logger.info(f"已从模板创建配置文件 '{self.runtime_path}'，需要的话去改一改")
        return True
