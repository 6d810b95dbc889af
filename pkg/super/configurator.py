# super/configurator.py
import json
import os
from abc import ABC
from typing import Any, Dict, List, Optional

from base.run_config import RunConfig
from utils.logging_setup import logger

DEFAULT_SETTINGS = "settings.json"


class Configurator(ABC):
    """Super-class for building the effective RunConfig of a command.

    Methods:
        load: settings file (or built-in defaults)
        apply_overrides: dotted section.key=value pairs, unknown keys rejected
        resolve: load + overrides + command flags
    """
    def __init__(self, manipulator: Optional['Manipulator'] = None):
        """Initialize the Configurator"""
        self._manipulator = manipulator
        logger.info("Initialized Configurator")

    def load(self, path: Optional[str] = None) -> RunConfig:
        if path is None:
            if not os.path.exists(DEFAULT_SETTINGS):
                logger.info("No settings file found, using built-in defaults")
                return RunConfig()
            path = DEFAULT_SETTINGS
        return RunConfig.load(path)

    @staticmethod
    def parse_value(raw: str) -> Any:
        """JSON literal when it parses, raw string otherwise"""
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw

    def apply_overrides(self, config: RunConfig, overrides: List[str]) -> RunConfig:
        """Return a new config with every `section.key=value` applied"""
        data = config.to_dict()
        for item in overrides or []:
            if "=" not in item:
                logger.error(f"Override '{item}' is not of the form key=value")
                raise ValueError(f"Override '{item}' must have the form section.key=value")
            key, raw = item.split("=", 1)
            key = key.strip()
            parts = key.split(".")
            if len(parts) != 2 or parts[0] not in data or parts[1] not in data[parts[0]]:
                logger.error(f"Unknown configuration key '{key}'")
                raise ValueError(f"Unknown configuration key '{key}'")
            data[parts[0]][parts[1]] = self.parse_value(raw)
            logger.debug(f"Override {key} = {data[parts[0]][parts[1]]!r}")
        return RunConfig.from_dict(data)

    def resolve(self, attributes: Dict[str, Any]) -> RunConfig:
        """Effective config for a command: file, then overrides, then --deterministic"""
        config = self.apply_overrides(self.load(attributes.get("config_path")), attributes.get("overrides", []))
        if attributes.get("deterministic"):
            config.train.deterministic = True
        logger.info(f"Effective configuration hash {config.config_hash()[:12]}")
        return config

    def execute(self, obj: Any, attributes: Dict[str, Any]) -> RunConfig:
        """Universal method: {"type": "overrides", "overrides": [...]} on a RunConfig, or {"type": "resolve", ...}"""
        kind = attributes.get("type")
        if kind == "overrides":
            return self.apply_overrides(obj, attributes.get("overrides", []))
        if kind == "resolve":
            return self.resolve(attributes)
        logger.error(f"No configuration method for type '{kind}'")
        raise ValueError(f"No configuration method for type '{kind}'")

    def __repr__(self) -> str:
        return "Configurator()"


class DefaultConfigurator(Configurator):
    """Default implementation of Configurator"""
    def __init__(self, manipulator: Optional['Manipulator'] = None):
        super().__init__(manipulator)
        logger.info("Initialized DefaultConfigurator")
