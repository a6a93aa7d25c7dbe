"""Image+caption dataset -> DEB1 embedding bundle + class-prototype file."""

__version__ = "0.1.0"

from .extract import ExtractError, bridge_to_width, extract, parse_task_list

__all__ = ["extract", "bridge_to_width", "parse_task_list", "ExtractError", "__version__"]
