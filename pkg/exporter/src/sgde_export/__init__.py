"""Export pretrained encoder features of primitive crops as SGDE files."""

__version__ = "0.1.0"

from .exporter import ENCODERS, ExportJob, export, load_encoder  # noqa: F401
