"""Typed parameter descriptors for the JSON run configuration.

Every section of the configuration is described by a list of parameters. Parsing a section
checks types and ranges, fills in defaults, rejects unknown keys and reports the dotted path of
the offending field.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from typing_extensions import override

logger = logging.getLogger("dentlab")

ConfigValue = Any
ConfigDict = Dict[str, ConfigValue]


class ConfigException(Exception):
    """Thrown when a configuration value is missing, unknown, of the wrong type or out of range."""

    def __init__(self, field_path: str, message: str):
        """Create the exception.

        :param field_path: Dotted path of the offending field, e.g. 'attacks[1].epsilon'.
        :param message: What is wrong with the field.
        """
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


def join_path(parent: str, key: str) -> str:
    """Dotted path of `key` below `parent`."""
    return f"{parent}.{key}" if parent else key


@dataclass(eq=True, frozen=True)
class ConfigParameter(ABC):
    """A key of a configuration section."""

    key_name: str = field(hash=True, compare=True)
    """Key name of the parameter."""
    description: Optional[str] = field(default=None, hash=False, compare=False)
    """Optional description, used in error messages and documentation."""
    required: bool = field(default=False, hash=False, compare=False)
    """Whether the key must be present."""

    @abstractmethod
    def parse(self, value: ConfigValue, path: str) -> ConfigValue:
        """Validate and convert a value read from JSON.

        :param value: The raw JSON value.
        :param path: Dotted path of the value, for error messages.
        :return: The converted value.
        """
        ...  # pragma: no cover

    @abstractmethod
    def default_value(self) -> ConfigValue:
        """Value used when the key is absent."""
        ...  # pragma: no cover


@dataclass(eq=True, frozen=True)
class StringParameter(ConfigParameter):
    """A string, optionally restricted to a set of options."""

    default: Optional[str] = field(default=None, hash=False, compare=False)
    """Optional default value."""
    enum_options: Optional[List[str]] = field(default=None, hash=False, compare=False)
    """Optional multiple choice values."""

    @override
    def parse(self, value: ConfigValue, path: str) -> Optional[str]:
        """Check the value is a string and one of the options."""
        if value is None and self.default is None and not self.required:
            return None
        if not isinstance(value, str):
            raise ConfigException(path, f"must be in 'str' format: '{value}'")
        if self.enum_options is not None and value not in self.enum_options:
            raise ConfigException(
                path, f"'{value}' is not one of the options {', '.join(self.enum_options)}"
            )
        return value

    @override
    def default_value(self) -> Optional[str]:
        """The default string."""
        return self.default


@dataclass(eq=True, frozen=True)
class BooleanParameter(ConfigParameter):
    """A boolean."""

    default: Optional[bool] = field(default=None, hash=False, compare=False)
    """Optional default value."""

    @override
    def parse(self, value: ConfigValue, path: str) -> bool:
        """Check the value is a JSON boolean."""
        if not isinstance(value, bool):
            raise ConfigException(path, f"must be in 'bool' format: '{value}'")
        return value

    @override
    def default_value(self) -> Optional[bool]:
        """The default boolean."""
        return self.default


@dataclass(eq=True, frozen=True)
class IntegerParameter(ConfigParameter):
    """An integer within optional bounds."""

    default: Optional[int] = field(default=None, hash=False, compare=False)
    """Optional default value."""
    minimum: Optional[int] = field(default=None, hash=False, compare=False)
    """Optional inclusive lower bound."""
    maximum: Optional[int] = field(default=None, hash=False, compare=False)
    """Optional inclusive upper bound."""

    @override
    def parse(self, value: ConfigValue, path: str) -> int:
        """Check the value is an integer within bounds.

        Floats with an integral value are accepted with a warning.
        """
        if isinstance(value, float) and value.is_integer():
            logger.warning("%s was passed as a float value %s, using %d", path, value, int(value))
            value = int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigException(path, f"must be in 'int' format: '{value}'")
        if self.minimum is not None and value < self.minimum:
            raise ConfigException(path, f"{value} is below the minimum {self.minimum}")
        if self.maximum is not None and value > self.maximum:
            raise ConfigException(path, f"{value} is above the maximum {self.maximum}")
        return value

    @override
    def default_value(self) -> Optional[int]:
        """The default integer."""
        return self.default


@dataclass(eq=True, frozen=True)
class FloatParameter(ConfigParameter):
    """A finite float within optional bounds."""

    default: Optional[float] = field(default=None, hash=False, compare=False)
    """Optional default value."""
    minimum: Optional[float] = field(default=None, hash=False, compare=False)
    """Optional inclusive lower bound."""
    maximum: Optional[float] = field(default=None, hash=False, compare=False)
    """Optional inclusive upper bound."""
    exclusive_minimum: bool = field(default=False, hash=False, compare=False)
    """Whether the lower bound itself is rejected."""
    nullable: bool = field(default=False, hash=False, compare=False)
    """Whether JSON null is accepted."""

    @override
    def parse(self, value: ConfigValue, path: str) -> Optional[float]:
        """Check the value is a finite number within bounds."""
        if value is None and self.nullable:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigException(path, f"must be in 'float' format: '{value}'")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigException(path, f"must be finite: '{value}'")
        if self.minimum is not None:
            if value < self.minimum or (self.exclusive_minimum and value == self.minimum):
                relation = "above" if self.exclusive_minimum else "at least"
                raise ConfigException(path, f"{value} must be {relation} {self.minimum}")
        if self.maximum is not None and value > self.maximum:
            raise ConfigException(path, f"{value} is above the maximum {self.maximum}")
        return value

    @override
    def default_value(self) -> Optional[float]:
        """The default float."""
        return self.default


@dataclass(eq=True, frozen=True)
class SectionParameter(ConfigParameter):
    """A nested JSON object described by its own parameters."""

    fields: Sequence[ConfigParameter] = field(default=(), hash=False, compare=False)
    """Parameters of the nested object."""

    @override
    def parse(self, value: ConfigValue, path: str) -> ConfigDict:
        """Parse the nested object."""
        return parse_section(self.fields, value, path)

    @override
    def default_value(self) -> ConfigDict:
        """All defaults of the nested object."""
        return parse_section(self.fields, {}, self.key_name)


@dataclass(eq=True, frozen=True)
class ListParameter(ConfigParameter):
    """A JSON list whose items are all described by one parameter."""

    item: Optional[ConfigParameter] = field(default=None, hash=False, compare=False)
    """Parameter describing each item."""
    default: Optional[List[ConfigValue]] = field(default=None, hash=False, compare=False)
    """Optional default list."""
    min_length: int = field(default=0, hash=False, compare=False)
    """Minimum number of items."""

    @override
    def parse(self, value: ConfigValue, path: str) -> List[ConfigValue]:
        """Parse every item of the list."""
        if not isinstance(value, list):
            raise ConfigException(path, f"must be a 'list': '{value}'")
        if len(value) < self.min_length:
            raise ConfigException(path, f"needs at least {self.min_length} items")
        assert self.item is not None
        return [self.item.parse(item, f"{path}[{index}]") for index, item in enumerate(value)]

    @override
    def default_value(self) -> Optional[List[ConfigValue]]:
        """The default list, every item parsed."""
        if self.default is None:
            return None
        return self.parse(list(self.default), self.key_name)


def parse_section(
    parameters: Sequence[ConfigParameter], values: ConfigValue, path: str
) -> ConfigDict:
    """Validate a JSON object against its parameters.

    :param parameters: Parameters of the section.
    :param values: The raw JSON object.
    :param path: Dotted path of the section ('' for the top level).
    :raises ConfigException: For unknown keys, missing required keys and invalid values.
    :return: Parsed values with defaults filled in for absent and null keys.
    """
    if not isinstance(values, dict):
        raise ConfigException(path or "<root>", f"must be an object: '{values}'")
    known = {parameter.key_name: parameter for parameter in parameters}
    for key in values:
        if key not in known:
            raise ConfigException(
                join_path(path, key), f"unknown key. Valid keys: {', '.join(sorted(known))}"
            )
    result: ConfigDict = {}
    for parameter in parameters:
        key_path = join_path(path, parameter.key_name)
        if values.get(parameter.key_name) is not None:
            result[parameter.key_name] = parameter.parse(values[parameter.key_name], key_path)
        elif parameter.required:
            raise ConfigException(key_path, "is required")
        else:
            result[parameter.key_name] = parameter.default_value()
    return result
