# feedflow/cli/__init__.py
