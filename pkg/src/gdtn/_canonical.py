"""Canonical text output: sorted keys, shortest round-trip floats, LF only."""

from __future__ import annotations

import json
from typing import Any


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(", ", ": "), allow_nan=False)


def dumps_doc(obj: Any) -> str:
    """Single-document JSON with a trailing newline."""
    return dumps(obj) + "\n"


def fmt_float(x: float, digits: int = 6) -> str:
    return f"{x:.{digits}f}"
