# feedflow/core/registry/__init__.py
from .model_registry import ModelRegistry, register_model

__all__ = ["ModelRegistry", "register_model"]
