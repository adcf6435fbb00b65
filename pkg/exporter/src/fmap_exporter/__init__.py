from .export import ExportSpec, export

__version__ = "0.1.0"
