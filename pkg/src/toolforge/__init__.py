"""toolforge: synthesize, validate, and benchmark multi-hop tool-use dialogues."""

__version__ = "0.1.0"

from .errors import ToolforgeError  # noqa: E402,F401
