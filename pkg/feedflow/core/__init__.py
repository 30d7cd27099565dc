# feedflow/core/__init__.py
