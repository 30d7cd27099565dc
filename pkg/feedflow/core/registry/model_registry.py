# feedflow/core/registry/model_registry.py
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Type

import yaml

from feedflow.core.errors import ConfigError

# Configure logging
logger = logging.getLogger(__name__)


class ModelRegistry:
    """Registry of likelihood models by kind.

    Model classes register themselves under a short kind ("dyadic", "station",
    "poisson"); shipped YAML presets under config/models register as configs of
    the same name, so the CLI can resolve both from a single ``--model`` flag.
    """

    # Static storage for registered model classes
    _model_classes: Dict[str, Type] = {}

    # Static storage for model presets
    _model_configs: Dict[str, Dict[str, Any]] = {}

    @classmethod
    def register_class(cls, kind: str, model_class: Type) -> None:
        """Register a model class.

        Args:
            kind: Unique identifier of the model kind
            model_class: The class to register
        """
        if kind in cls._model_classes:
            logger.warning(f"Model class {kind} already registered, overwriting")

        cls._model_classes[kind] = model_class
        logger.debug(f"Registered model class: {kind} -> {model_class.__name__}")

    @classmethod
    def register_config(cls, kind: str, config: Dict[str, Any]) -> None:
        """Register a configuration preset for a model kind."""
        if kind in cls._model_configs:
            logger.warning(f"Model config {kind} already registered, overwriting")

        cls._model_configs[kind] = config
        logger.debug(f"Registered model config: {kind}")

    @classmethod
    def get_model_class(cls, kind: str) -> Optional[Type]:
        return cls._model_classes.get(kind)

    @classmethod
    def get_model_config(cls, kind: str) -> Optional[Dict[str, Any]]:
        return cls._model_configs.get(kind)

    @classmethod
    def create_model(cls, kind: str, *args, **kwargs):
        """Instantiate the model registered under ``kind``.

        Raises:
            ConfigError: If no class is registered for the kind.
        """
        model_class = cls.get_model_class(kind)
        if model_class is None:
            raise ConfigError(
                f"Unknown model kind '{kind}', registered: {', '.join(cls.list_model_classes())}"
            )
        return model_class(*args, **kwargs)

    @classmethod
    def list_model_classes(cls) -> List[str]:
        return sorted(cls._model_classes.keys())

    @classmethod
    def load_all_configs(cls, config_dir: Optional[Path] = None) -> List[str]:
        """Load every model preset found in a directory.

        Args:
            config_dir: Directory of YAML presets; defaults to config/models.

        Returns:
            Kinds whose presets were loaded.
        """
        if config_dir is None:
            config_dir = Path(__file__).parent.parent.parent.parent / "config" / "models"

        if not config_dir.exists():
            logger.warning(f"Model config directory {config_dir} does not exist")
            return []

        loaded = []
        for config_file in sorted(config_dir.glob("*.yaml")):
            try:
                with open(config_file, "r", encoding="utf-8") as f:
                    config = yaml.safe_load(f) or {}
                cls.register_config(config_file.stem, config)
                loaded.append(config_file.stem)
            except yaml.YAMLError as e:
                logger.error(f"Error loading model config {config_file}: {str(e)}")
        return loaded


def register_model(kind: str):
    """Class decorator registering a model under ``kind``."""

    def decorator(model_class):
        ModelRegistry.register_class(kind, model_class)
        return model_class

    return decorator
