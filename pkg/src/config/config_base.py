import dataclasses
from dataclasses import MISSING, dataclass, fields
from typing import Any, TypeVar, get_type_hints

import tomlkit

T = TypeVar("T", bound="ConfigBase")

_MAPPING_TYPES = (dict, tomlkit.items.Table, tomlkit.items.InlineTable)


@dataclass
class ConfigBase:
    """配置类的基类：从 TOML 字典构造、导出回字典、按名字覆盖字段。"""

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """子类按需检查取值范围，不合法就抛 InvalidParameterError。"""

    @classmethod
    def from_dict(cls: type[T], data: dict[str, Any]) -> T:
        if not isinstance(data, _MAPPING_TYPES):
            raise TypeError(f"Expected a dictionary-like object for {cls.__name__}, got {type(data).__name__}")

        hints = get_type_hints(cls)
        init_args: dict[str, Any] = {}
        for f in fields(cls):
            if f.name.startswith("_") or not f.init:
                continue
            if f.name not in data:
                if f.default is MISSING and f.default_factory is MISSING:
                    raise ValueError(f"Missing required field in config data for '{cls.__name__}': '{f.name}'")
                continue
            try:
                init_args[f.name] = cls._convert_field(data[f.name], hints[f.name], f.name)
            except (TypeError, ValueError) as e:
                raise type(e)(f"Field '{cls.__name__}.{f.name}': {e}") from e

        unknown = set(data.keys()) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"Unknown field(s) for '{cls.__name__}': {sorted(unknown)}")
        return cls(**init_args)

    @classmethod
    def _convert_field(cls, value: object, field_type: type, field_name: str) -> Any:  # noqa: ANN401
        """字段只有标量和嵌套的 ConfigBase 两种。"""
        if value is None:
            raise ValueError(f"'{field_name}' does not accept None")

        if isinstance(field_type, type) and issubclass(field_type, ConfigBase):
            if not isinstance(value, _MAPPING_TYPES):
                raise TypeError(f"Expected a table for nested '{field_name}', got {type(value).__name__}")
            return field_type.from_dict(value)

        if field_type is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in {"true", "false"}:
                return value.lower() == "true"
            raise TypeError(f"Cannot convert '{value}' to bool for '{field_name}'. Use true or false.")
        if field_type in {int, float} and isinstance(value, bool):
            raise TypeError(f"Refusing to read bool as {field_type.__name__} for '{field_name}'")
        if field_type is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(f"'{field_name}' expects an integer, got {value}")
        try:
            return field_type(value)
        except (TypeError, ValueError) as e:
            raise TypeError(f"Cannot convert {type(value).__name__} '{str(value)[:50]}' for '{field_name}': {e}") from e

    def to_dict(self) -> dict[str, Any]:
        """导出成只含基本类型的字典，嵌套的配置类变成子表。"""
        result: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            result[f.name] = value.to_dict() if isinstance(value, ConfigBase) else value
        return result

    def with_overrides(self: T, **overrides: Any) -> T:  # noqa: ANN401
        """返回一个覆盖了部分字段的新对象；值为 None 的覆盖项忽略（命令行没给的参数）。"""
        changes = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ValueError(f"Unknown field(s) for '{self.__class__.__name__}': {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    def __str__(self) -> str:
        return f"{self.__class__.__name__}({', '.join(f'{f.name}={getattr(self, f.name)!r}' for f in fields(self))})"
