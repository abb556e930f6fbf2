"""Client SDK for the spatialenv newline-delimited protocol."""

from .client import (DEFAULT_COMMAND, EngineError, EnvClient, TransportError,
                     connect, dumps, format_float)

__version__ = "0.1.0"

__all__ = ["DEFAULT_COMMAND", "EngineError", "EnvClient", "TransportError",
           "connect", "dumps", "format_float"]
