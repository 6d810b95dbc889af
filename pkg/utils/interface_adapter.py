# utils/interface_adapter.py
from typing import Any, Callable, Dict, List

from utils.logging_setup import logger

COMMON_KEYS = ("config_path", "overrides", "run_name", "deterministic")


class InterfaceAdapter:
    """Adapt interface inputs (argparse namespaces, dicts) to Manipulator attributes.

    Attributes:
        converters (Dict[str, Callable[[Any], Dict[str, Any]]]): Registered converters per command.

    Methods:
        register_converter: Register a custom converter for a command.
        convert: Convert raw input data into an attributes dictionary.
        register_default_converters: Register built-in converters for every CLI command.
    """
    def __init__(self):
        """Initialize the InterfaceAdapter."""
        self.converters: Dict[str, Callable[[Any], Dict[str, Any]]] = {}
        self.register_default_converters()
        logger.info("Initialized InterfaceAdapter with default converters")

    def register_converter(self, command: str, converter: Callable[[Any], Dict[str, Any]]) -> None:
        self.converters[command] = converter
        logger.debug(f"Registered converter for {command}")

    def convert(self, command: str, raw_data: Any) -> Dict[str, Any]:
        """Convert raw input data into attributes dictionary."""
        converter = self.converters.get(command)
        if not converter:
            logger.error(f"No converter registered for {command}")
            raise ValueError(f"No converter registered for {command}")
        attributes = converter(raw_data)
        if not isinstance(attributes, dict):
            logger.error(f"Converter for {command} returned non-dict: {type(attributes)}")
            raise ValueError(f"Converter must return a dictionary, got {type(attributes)}")
        logger.debug(f"Converted raw data for {command}: {attributes}")
        return attributes

    def register_default_converters(self) -> None:
        self.register_converter("generate-data", self._common_converter)
        self.register_converter("train", self._common_converter)
        self.register_converter("push", self._checkpoint_converter)
        self.register_converter("eval", self._eval_converter)
        self.register_converter("explain", self._explain_converter)
        self.register_converter("ablate", self._common_converter)

    @staticmethod
    def _fields(raw_data: Any) -> Dict[str, Any]:
        if isinstance(raw_data, dict):
            return dict(raw_data)
        if hasattr(raw_data, "__dict__"):
            return dict(vars(raw_data))
        raise ValueError(f"Unsupported data type for command attributes: {type(raw_data)}")

    def _common_converter(self, raw_data: Any) -> Dict[str, Any]:
        data = self._fields(raw_data)
        overrides: List[str] = list(data.get("overrides") or [])
        return {
            "config_path": data.get("config_path"),
            "overrides": overrides,
            "run_name": data.get("run_name") or "default",
            "deterministic": bool(data.get("deterministic", False)),
        }

    def _checkpoint_converter(self, raw_data: Any) -> Dict[str, Any]:
        attributes = self._common_converter(raw_data)
        checkpoint = self._fields(raw_data).get("checkpoint")
        if checkpoint:
            attributes["checkpoint"] = str(checkpoint)
        return attributes

    def _eval_converter(self, raw_data: Any) -> Dict[str, Any]:
        attributes = self._checkpoint_converter(raw_data)
        data = self._fields(raw_data)
        if data.get("split"):
            attributes["split"] = str(data["split"])
        attributes["oracle"] = bool(data.get("oracle", False))
        attributes["export_csv"] = bool(data.get("export_csv", False))
        if attributes["oracle"] and "checkpoint" in attributes:
            logger.error("--oracle and --checkpoint are mutually exclusive")
            raise ValueError("--oracle and --checkpoint are mutually exclusive")
        return attributes

    def _explain_converter(self, raw_data: Any) -> Dict[str, Any]:
        attributes = self._checkpoint_converter(raw_data)
        data = self._fields(raw_data)
        if data.get("split"):
            attributes["split"] = str(data["split"])
        if data.get("out_dir"):
            attributes["out_dir"] = str(data["out_dir"])
        return attributes
