"""Stable JSON serialization shared by verdicts, logs, and the wire protocol.

Floats are rendered as decimal with 9 significant digits so the same value
serializes to the same bytes on every platform. Key order is preserved as
written by the caller (never re-sorted), which keeps log lines byte-stable.
"""

from __future__ import annotations

import json
import math
from typing import Any


def format_float(x: float) -> str:
    """Render a float as a decimal with 9 significant digits.

    Always valid JSON: integral values gain a trailing '.0' so they stay
    floats on the way back in.
    """
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite float not serializable: {x!r}")
    s = format(x, ".9g")
    if "e" not in s and "E" not in s and "." not in s:
        s += ".0"
    return s


def _encode(obj: Any, out: list[str]) -> None:
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, bool):  # pragma: no cover - caught above
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if not isinstance(k, str):
                raise TypeError(f"non-string key: {k!r}")
            if i:
                out.append(",")
            out.append(json.dumps(k, ensure_ascii=False))
            out.append(":")
            _encode(v, out)
        out.append("}")
    else:
        raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


def dumps(obj: Any) -> str:
    """Serialize to a single compact line with stable float formatting."""
    out: list[str] = []
    _encode(obj, out)
    return "".join(out)


def loads(text: str) -> Any:
    return json.loads(text)
