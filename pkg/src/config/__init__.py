from .avlad_configs import (
    ActionVladRootConfig,
    CodebookSettings,
    EvaluationSettings,
    RuntimeSettings,
    SynthConfig,
    TrainConfig,
)
from .config_manager import get_typed_settings

# 这里不在导入时加载配置：库函数只吃显式传入的配置对象，命令行入口才调用 get_typed_settings()。
__all__ = [
    "ActionVladRootConfig",
    "CodebookSettings",
    "EvaluationSettings",
    "RuntimeSettings",
    "SynthConfig",
    "TrainConfig",
    "get_typed_settings",
]
