# feedflow/services/__init__.py
