# feedflow/processors/__init__.py
