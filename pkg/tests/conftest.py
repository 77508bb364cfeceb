import os

# 测试不落日志文件
os.environ.setdefault("FILE_LOG_LEVEL", "OFF")
os.environ.setdefault("CONSOLE_LOG_LEVEL", "WARNING")

import numpy as np  # noqa: E402
import pytest  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
