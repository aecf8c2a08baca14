# b3seg/pipelines/__init__.py
