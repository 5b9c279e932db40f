"""Canonical JSON: byte-stable serialization for manifests, reports, configs.

Rules: keys sorted, compact separators, UTF-8, floats printed with at most
9 significant digits, NaN/Inf rejected. Two runs producing equal values
produce equal bytes.
"""

from __future__ import annotations

import json
import math
from typing import Any


def _format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("canonical JSON forbids NaN/Inf")
    if x == int(x) and abs(x) < 1e16:
        # Keep small whole floats readable and unambiguous.
        return f"{x:.1f}"
    return format(x, ".9g")


def _encode(obj: Any, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _encode(v, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, k in enumerate(sorted(obj)):
            if not isinstance(k, str):
                raise TypeError(f"canonical JSON keys must be str, got {type(k).__name__}")
            if i:
                out.append(",")
            out.append(json.dumps(k, ensure_ascii=False))
            out.append(":")
            _encode(obj[k], out)
        out.append("}")
    else:
        raise TypeError(f"canonical JSON cannot encode {type(obj).__name__}")


def dumps_canonical(obj: Any) -> str:
    """Serialize obj to a canonical JSON string."""
    out: list[str] = []
    _encode(obj, out)
    return "".join(out)


def dump_canonical(obj: Any, path) -> None:
    """Write canonical JSON to path (UTF-8, trailing newline)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(obj))
        fh.write("\n")


def load_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
